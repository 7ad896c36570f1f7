//! Core data types shared by every stage of the pipeline: volumes, labels,
//! subjects, datasets, and the on-disk formats that carry them.

mod manifest;
mod split;
mod volume;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

pub use manifest::{load_dataset, write_manifest, ManifestRow};
pub use split::{split_train_test, stratified_train_counts, SplitSpec};
pub use volume::{read_volume, write_volume, Volume, VOLUME_MAGIC};

/// Number of diagnostic classes.
pub const NUM_CLASSES: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: Vec<u8>,
    },
    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },
    #[error("{path}: {extra} unexpected trailing bytes after payload")]
    TrailingBytes { path: PathBuf, extra: u64 },
    #[error("dimensions {depth}x{height}x{width} overflow the addressable voxel count")]
    DimensionOverflow {
        depth: u64,
        height: u64,
        width: u64,
    },
    #[error("dimensions {depth}x{height}x{width} must all be positive")]
    ZeroDimension {
        depth: usize,
        height: usize,
        width: usize,
    },
    #[error("voxel count {found} does not match dimensions (expected {expected})")]
    VoxelCount { expected: usize, found: usize },
    #[error("non-finite voxel value {value} at index {index}")]
    NonFinite { index: usize, value: f32 },
    #[error("unknown class label {0:?}")]
    UnknownLabel(String),
    #[error("unknown modality {0:?}")]
    UnknownModality(String),
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("duplicate row for subject {subject_id:?}, modality {modality}")]
    DuplicateRow {
        subject_id: String,
        modality: Modality,
    },
    #[error("duplicate subject id {0:?}")]
    DuplicateSubject(String),
    #[error("subject id must be nonempty")]
    EmptySubjectId,
    #[error("subject {subject_id:?}: modality {modality} has dims {found:?}, others have {expected:?}")]
    DimensionMismatch {
        subject_id: String,
        modality: Modality,
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("subject {subject_id:?} has conflicting labels {first} and {second}")]
    ConflictingLabel {
        subject_id: String,
        first: ClassLabel,
        second: ClassLabel,
    },
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
    #[error("class {label} has {count} subjects; stratified splitting needs at least 2")]
    ClassTooSmall { label: ClassLabel, count: usize },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// Diagnostic class. Integer codes are fixed and order every probability vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ClassLabel {
    Hc = 0,
    Pd = 1,
    Swedd = 2,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; NUM_CLASSES] = [ClassLabel::Hc, ClassLabel::Pd, ClassLabel::Swedd];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::Hc => "HC",
            ClassLabel::Pd => "PD",
            ClassLabel::Swedd => "SWEDD",
        }
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClassLabel {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "HC" => Ok(ClassLabel::Hc),
            "PD" => Ok(ClassLabel::Pd),
            "SWEDD" => Ok(ClassLabel::Swedd),
            other => Err(DataError::UnknownLabel(other.to_string())),
        }
    }
}

/// Imaging channel. `ALL` is the canonical processing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Gm,
    Wm,
    Fa,
    Md,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Gm, Modality::Wm, Modality::Fa, Modality::Md];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Gm => "GM",
            Modality::Wm => "WM",
            Modality::Fa => "FA",
            Modality::Md => "MD",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "GM" => Ok(Modality::Gm),
            "WM" => Ok(Modality::Wm),
            "FA" => Ok(Modality::Fa),
            "MD" => Ok(Modality::Md),
            other => Err(DataError::UnknownModality(other.to_string())),
        }
    }
}

/// One labeled subject with up to four same-shaped modality volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    id: String,
    label: ClassLabel,
    volumes: BTreeMap<Modality, Volume>,
}

impl Subject {
    pub fn new(
        id: impl Into<String>,
        label: ClassLabel,
        volumes: BTreeMap<Modality, Volume>,
    ) -> Result<Self> {
        let id = id.into();
        if id.is_empty() {
            return Err(DataError::EmptySubjectId);
        }
        let mut dims: Option<(usize, usize, usize)> = None;
        for (&modality, vol) in &volumes {
            match dims {
                None => dims = Some(vol.dims()),
                Some(expected) if expected != vol.dims() => {
                    return Err(DataError::DimensionMismatch {
                        subject_id: id,
                        modality,
                        expected,
                        found: vol.dims(),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(Self { id, label, volumes })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn label(&self) -> ClassLabel {
        self.label
    }

    pub fn volume(&self, modality: Modality) -> Option<&Volume> {
        self.volumes.get(&modality)
    }

    pub fn volumes(&self) -> &BTreeMap<Modality, Volume> {
        &self.volumes
    }
}

/// Subjects in canonical (lexicographic id) order plus a provenance tag.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    subjects: Vec<Subject>,
    provenance: String,
}

impl Dataset {
    /// Sorts by subject id and rejects duplicates.
    pub fn new(mut subjects: Vec<Subject>, provenance: impl Into<String>) -> Result<Self> {
        subjects.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = subjects.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(DataError::DuplicateSubject(w[0].id.clone()));
        }
        Ok(Self {
            subjects,
            provenance: provenance.into(),
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for s in &self.subjects {
            counts[s.label.code()] += 1;
        }
        counts
    }

    pub fn labels(&self) -> Vec<ClassLabel> {
        self.subjects.iter().map(|s| s.label).collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.subjects.iter().map(|s| s.id.as_str()).collect()
    }
}

/// A classifier's per-subject output: three non-negative probabilities in
/// class-code order, summing to one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbVector([f64; NUM_CLASSES]);

#[derive(Debug, thiserror::Error)]
#[error("invalid probability vector {0:?}: entries must be finite, non-negative, with positive sum")]
pub struct InvalidProbVector(pub [f64; NUM_CLASSES]);

impl ProbVector {
    /// Renormalizes `raw` to sum to one.
    pub fn new(raw: [f64; NUM_CLASSES]) -> Result<Self, InvalidProbVector> {
        let sum: f64 = raw.iter().sum();
        if raw.iter().any(|p| !p.is_finite() || *p < 0.0) || !(sum > 0.0) || !sum.is_finite() {
            return Err(InvalidProbVector(raw));
        }
        Ok(Self(raw.map(|p| p / sum)))
    }

    pub fn uniform() -> Self {
        Self([1.0 / NUM_CLASSES as f64; NUM_CLASSES])
    }

    pub fn values(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }

    pub fn get(&self, label: ClassLabel) -> f64 {
        self.0[label.code()]
    }

    /// Highest-probability class; ties go to the lowest class code.
    pub fn argmax(&self) -> ClassLabel {
        let mut best = 0;
        for j in 1..NUM_CLASSES {
            if self.0[j] > self.0[best] {
                best = j;
            }
        }
        ClassLabel::ALL[best]
    }
}
