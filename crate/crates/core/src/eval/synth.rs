//! Synthetic four-modality cohort standing in for the real imaging data.
//!
//! Every class owns a Gaussian blob location. In each modality a subject's
//! blob amplitudes sit near its class profile plus subject-level noise, and one
//! class pair shares an almost identical profile, so no single modality
//! separates all three classes while the four together do. FA and MD maps are
//! derived from synthetic diffusion tensors.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::datamodel::{
    write_manifest, write_volume, ClassLabel, DataError, Dataset, ManifestRow, Modality, Subject, Volume,
    NUM_CLASSES,
};
use crate::dti::{compute_scalar_maps, Sym3Tensor, TensorVolume};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub per_class: [usize; NUM_CLASSES],
    /// depth, height, width
    pub dims: (usize, usize, usize),
    /// Multiplies both noise terms; 0 makes subjects of a class identical.
    pub noise_scale: f64,
    /// Standard deviation of per-subject blob amplitudes.
    pub subject_sigma: f64,
    /// Standard deviation of independent voxel noise.
    pub voxel_sigma: f64,
    /// Amplitude gap between the two classes of an ambiguous pair.
    pub pair_gap: f64,
    /// Ambiguous class pair per modality, in GM, WM, FA, MD order.
    pub ambiguous: [(ClassLabel, ClassLabel); 4],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        use ClassLabel::*;
        Self {
            per_class: [30; NUM_CLASSES],
            dims: (16, 32, 32),
            noise_scale: 1.0,
            subject_sigma: 0.35,
            voxel_sigma: 0.3,
            pair_gap: 0.3,
            ambiguous: [(Hc, Pd), (Pd, Swedd), (Hc, Swedd), (Hc, Pd)],
            seed: 1337,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("class {label} needs at least 2 subjects, got {count}")]
    TooFewSubjects { label: ClassLabel, count: usize },
    #[error("dimensions must be positive, got {0:?}")]
    Dims((usize, usize, usize)),
    #[error("ambiguous pair for {0} must name two different classes")]
    Pair(Modality),
    #[error("noise and gap parameters must be finite and non-negative")]
    Parameter,
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("tensor field: {0}")]
    Tensor(String),
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (label, &count) in ClassLabel::ALL.iter().zip(&self.per_class) {
            if count < 2 {
                return Err(SynthError::TooFewSubjects { label: *label, count });
            }
        }
        let (d, h, w) = self.dims;
        if d == 0 || h == 0 || w == 0 {
            return Err(SynthError::Dims(self.dims));
        }
        for (m, (a, b)) in Modality::ALL.iter().zip(&self.ambiguous) {
            if a == b {
                return Err(SynthError::Pair(*m));
            }
        }
        if [self.noise_scale, self.subject_sigma, self.voxel_sigma, self.pair_gap]
            .iter()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(SynthError::Parameter);
        }
        Ok(())
    }

    /// Expected blob amplitudes of `label` in `modality`, indexed by blob owner.
    pub fn profile(&self, modality: Modality, label: ClassLabel) -> [f64; NUM_CLASSES] {
        let (a, b) = self.ambiguous[Modality::ALL.iter().position(|&m| m == modality).unwrap()];
        let mut p = [0.0; NUM_CLASSES];
        if label == a || label == b {
            let other = if label == a { b } else { a };
            p[label.code()] = 0.5 + self.pair_gap / 2.0;
            p[other.code()] = 0.5 - self.pair_gap / 2.0;
        } else {
            p[label.code()] = 1.0;
        }
        p
    }
}

/// Blob centers as fractions of (depth, height, width).
const CENTERS: [(f64, f64, f64); NUM_CLASSES] = [(0.5, 0.3, 0.3), (0.5, 0.3, 0.7), (0.5, 0.7, 0.5)];

struct Fields {
    blobs: [Vec<f64>; NUM_CLASSES],
    background: [Vec<f64>; 2],
    angle: Vec<f64>,
}

fn fields(dims: (usize, usize, usize)) -> Fields {
    let (d, h, w) = dims;
    let n = d * h * w;
    let coord = |i: usize| {
        let z = i / (h * w);
        let y = (i / w) % h;
        let x = i % w;
        ((z as f64 + 0.5) / d as f64, (y as f64 + 0.5) / h as f64, (x as f64 + 0.5) / w as f64)
    };
    let blob = |c: usize| -> Vec<f64> {
        let (cz, cy, cx) = CENTERS[c];
        (0..n)
            .map(|i| {
                let (z, y, x) = coord(i);
                let r2 = ((y - cy) / 0.15).powi(2) + ((x - cx) / 0.15).powi(2) + ((z - cz) / 0.6).powi(2);
                (-0.5 * r2).exp()
            })
            .collect()
    };
    Fields {
        blobs: [blob(0), blob(1), blob(2)],
        background: [
            (0..n).map(|i| 0.3 + 0.2 * (PI * coord(i).1).sin()).collect(),
            (0..n).map(|i| 0.4 - 0.2 * (PI * coord(i).2).cos()).collect(),
        ],
        angle: (0..n).map(|i| PI * (coord(i).1 + 0.5 * coord(i).2)).collect(),
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Blob amplitudes from the class profile plus subject noise, then voxel noise.
fn signal(cfg: &SynthConfig, f: &Fields, m: Modality, label: ClassLabel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let profile = cfg.profile(m, label);
    let amps: Vec<f64> = profile
        .iter()
        .map(|p| p + cfg.noise_scale * cfg.subject_sigma * normal(rng))
        .collect();
    (0..f.angle.len())
        .map(|i| {
            let s: f64 = (0..NUM_CLASSES).map(|k| amps[k] * f.blobs[k][i]).sum();
            s + cfg.noise_scale * cfg.voxel_sigma * normal(rng)
        })
        .collect()
}

/// `R_z(θ) diag(md(1+2a), md(1−a), md(1−a)) R_z(θ)ᵀ`, whose MD is `md` and FA is `3a / sqrt(3 + 6a²)`.
fn tensor(md: f64, a: f64, theta: f64) -> Sym3Tensor {
    let (l1, l2) = (md * (1.0 + 2.0 * a), md * (1.0 - a));
    let (c, s) = (theta.cos(), theta.sin());
    Sym3Tensor::new(
        l1 * c * c + l2 * s * s,
        l1 * s * s + l2 * c * c,
        l2,
        (l1 - l2) * c * s,
        0.0,
        0.0,
    )
}

fn to_volume(dims: (usize, usize, usize), values: Vec<f64>) -> Result<Volume, DataError> {
    Volume::new(dims.0, dims.1, dims.2, values.into_iter().map(|v| v as f32).collect())
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Dataset, SynthError> {
    cfg.validate()?;
    let f = fields(cfg.dims);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut subjects = Vec::new();
    for label in ClassLabel::ALL {
        for i in 0..cfg.per_class[label.code()] {
            let mut volumes = BTreeMap::new();
            for (m, bg) in [(Modality::Gm, &f.background[0]), (Modality::Wm, &f.background[1])] {
                let s = signal(cfg, &f, m, label, &mut rng);
                volumes.insert(m, to_volume(cfg.dims, s.iter().zip(bg).map(|(s, b)| s + b).collect())?);
            }
            let fa_signal = signal(cfg, &f, Modality::Fa, label, &mut rng);
            let md_signal = signal(cfg, &f, Modality::Md, label, &mut rng);
            let tensors = (0..f.angle.len())
                .map(|v| {
                    let md = (0.8 + 0.4 * md_signal[v]).max(0.05);
                    let a = (0.2 + 0.4 * fa_signal[v]).clamp(0.0, 0.9);
                    tensor(md, a, f.angle[v])
                })
                .collect();
            let (d, h, w) = cfg.dims;
            let tv = TensorVolume::new(d, h, w, tensors).map_err(|e| SynthError::Tensor(e.to_string()))?;
            let maps = compute_scalar_maps(&tv).map_err(|e| SynthError::Tensor(e.to_string()))?;
            volumes.insert(Modality::Fa, maps.fa);
            volumes.insert(Modality::Md, maps.md);
            let id = format!("{}-{i:03}", label.as_str().to_ascii_lowercase());
            subjects.push(Subject::new(id, label, volumes)?);
        }
    }
    Ok(Dataset::new(subjects, "synthetic")?)
}

/// Writes `<id>_<modality>.vol` files and `manifest.csv` into `dir`; returns the manifest path.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<PathBuf, DataError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| DataError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut rows = Vec::new();
    for s in dataset.subjects() {
        for (&m, v) in s.volumes() {
            let name = format!("{}_{}.vol", s.id(), m.as_str().to_ascii_lowercase());
            write_volume(dir.join(&name), v)?;
            rows.push(ManifestRow {
                subject_id: s.id().to_string(),
                label: s.label(),
                modality: m,
                path: PathBuf::from(name),
            });
        }
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}
