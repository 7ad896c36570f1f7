//! Adaptive synthetic oversampling (ADASYN) over flattened feature vectors.
//!
//! Minority samples whose neighborhoods are dominated by other classes get
//! proportionally more synthetic neighbors, each drawn on the segment between
//! the sample and a same-class neighbor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datamodel::{ClassLabel, NUM_CLASSES};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AdasynError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("balance level {0} must lie in (0, 1]")]
    InvalidBeta(f64),
    #[error("k = {k} requires more than {k} rows, have {rows}")]
    TooFewRows { k: usize, rows: usize },
    #[error("query row {row} out of range for {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("minority class {0} has no samples")]
    EmptyMinority(ClassLabel),
    #[error("minority class {label} has {minority} samples, more than the majority count {majority}")]
    MinorityLargerThanMajority {
        label: ClassLabel,
        minority: usize,
        majority: usize,
    },
    #[error("feature matrix shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite feature at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("at least two classes are needed for balancing, found {0}")]
    TooFewClasses(usize),
}

pub type Result<T> = std::result::Result<T, AdasynError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdasynConfig {
    k: usize,
    beta: f64,
    seed: u64,
}

impl AdasynConfig {
    pub fn new(k: usize, beta: f64, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(AdasynError::ZeroK);
        }
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(AdasynError::InvalidBeta(beta));
        }
        Ok(Self { k, beta, seed })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Labeled rows of equal-length feature vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    cols: usize,
    values: Vec<f32>,
    labels: Vec<ClassLabel>,
}

impl FeatureMatrix {
    pub fn new(cols: usize, values: Vec<f32>, labels: Vec<ClassLabel>) -> Result<Self> {
        if cols == 0 && !labels.is_empty() {
            return Err(AdasynError::Shape("zero feature columns".into()));
        }
        if values.len() != cols * labels.len() {
            return Err(AdasynError::Shape(format!(
                "{} values for {} rows of {cols} columns",
                values.len(),
                labels.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(AdasynError::NonFinite {
                row: i / cols,
                col: i % cols,
            });
        }
        Ok(Self {
            cols,
            values,
            labels,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f32>>, labels: Vec<ClassLabel>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.len() != labels.len() {
            return Err(AdasynError::Shape(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if rows.iter().any(|r| r.len() != cols) {
            return Err(AdasynError::Shape("ragged rows".into()));
        }
        Self::new(cols, rows.concat(), labels)
    }

    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut c = [0; NUM_CLASSES];
        for l in &self.labels {
            c[l.code()] += 1;
        }
        c
    }

    fn push_row(&mut self, row: &[f32], label: ClassLabel) {
        self.values.extend_from_slice(row);
        self.labels.push(label);
    }
}

fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Indices of the `k` rows nearest to `query_row` (Euclidean), excluding the
/// query itself. Equal distances resolve to the lower row index.
pub fn knn_indices(x: &FeatureMatrix, query_row: usize, k: usize) -> Result<Vec<usize>> {
    let m = x.rows();
    if query_row >= m {
        return Err(AdasynError::RowOutOfRange {
            row: query_row,
            rows: m,
        });
    }
    if k >= m {
        return Err(AdasynError::TooFewRows { k, rows: m });
    }
    let q = x.row(query_row);
    let mut dist: Vec<(f64, usize)> = (0..m)
        .filter(|&i| i != query_row)
        .map(|i| (squared_distance(q, x.row(i)), i))
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(dist.into_iter().take(k).map(|(_, i)| i).collect())
}

/// Synthesis schedule for one minority class.
#[derive(Debug, Clone, PartialEq)]
pub struct AdasynPlan {
    pub minority: ClassLabel,
    /// Neighbor count actually used (may be clamped below the configured k).
    pub k: usize,
    /// Row indices of the minority samples, ascending.
    pub minority_rows: Vec<usize>,
    /// k nearest neighbors of each minority sample.
    pub neighbors: Vec<Vec<usize>>,
    /// Fraction of each neighborhood belonging to other classes.
    pub ratios: Vec<f64>,
    pub normalized: Vec<f64>,
    pub counts: Vec<usize>,
    pub total: usize,
}

/// Integer apportionment of `total` by largest remainder; ties (within
/// rounding noise) favor the lower index.
pub fn largest_remainder(total: usize, shares: &[f64]) -> Vec<usize> {
    const TIE_EPS: f64 = 1e-9;
    if shares.is_empty() {
        return Vec::new();
    }
    let quotas: Vec<f64> = shares.iter().map(|s| s * total as f64).collect();
    let mut counts: Vec<usize> = quotas
        .iter()
        .map(|q| (q + TIE_EPS).floor().max(0.0) as usize)
        .collect();
    let assigned: usize = counts.iter().sum();
    let key: Vec<i64> = quotas
        .iter()
        .zip(&counts)
        .map(|(q, &c)| ((q - c as f64) / TIE_EPS).round() as i64)
        .collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| key[b].cmp(&key[a]).then(a.cmp(&b)));
    let mut remaining = total.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        counts[i] += 1;
        remaining -= 1;
    }
    counts
}

/// Computes how many synthetic samples each minority sample receives.
pub fn adasyn_plan(
    x: &FeatureMatrix,
    minority: ClassLabel,
    majority_count: usize,
    cfg: &AdasynConfig,
) -> Result<AdasynPlan> {
    let minority_rows: Vec<usize> = (0..x.rows()).filter(|&i| x.labels[i] == minority).collect();
    let m_min = minority_rows.len();
    if m_min == 0 {
        return Err(AdasynError::EmptyMinority(minority));
    }
    if m_min > majority_count {
        return Err(AdasynError::MinorityLargerThanMajority {
            label: minority,
            minority: m_min,
            majority: majority_count,
        });
    }
    let m = x.rows();
    if m < 2 {
        return Err(AdasynError::TooFewRows { k: cfg.k, rows: m });
    }
    let k = if cfg.k >= m {
        log::warn!("k = {} clamped to {} for {m} rows", cfg.k, m - 1);
        m - 1
    } else {
        cfg.k
    };

    let total = ((majority_count - m_min) as f64 * cfg.beta).round() as usize;
    let neighbors = minority_rows
        .iter()
        .map(|&i| knn_indices(x, i, k))
        .collect::<Result<Vec<_>>>()?;
    let ratios: Vec<f64> = neighbors
        .iter()
        .map(|nb| nb.iter().filter(|&&j| x.labels[j] != minority).count() as f64 / k as f64)
        .collect();
    let sum: f64 = ratios.iter().sum();
    let normalized: Vec<f64> = if sum > 0.0 {
        ratios.iter().map(|r| r / sum).collect()
    } else {
        vec![1.0 / m_min as f64; m_min]
    };
    let counts = largest_remainder(total, &normalized);

    Ok(AdasynPlan {
        minority,
        k,
        minority_rows,
        neighbors,
        ratios,
        normalized,
        counts,
        total,
    })
}

/// Synthetic rows for one minority class plus the two parents of each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub samples: FeatureMatrix,
    pub parents: Vec<(usize, usize)>,
    /// Rows copied verbatim because the class had no second member.
    pub duplicated: usize,
}

/// `x_i + (x_z − x_i)·λ`, evaluated in 64-bit.
pub fn interpolate(xi: &[f32], xz: &[f32], lambda: f64) -> Vec<f32> {
    xi.iter()
        .zip(xz)
        .map(|(&a, &b)| (a as f64 + (b as f64 - a as f64) * lambda) as f32)
        .collect()
}

fn nearest_same_class(x: &FeatureMatrix, row: usize, members: &[usize]) -> Option<usize> {
    members
        .iter()
        .copied()
        .filter(|&j| j != row)
        .map(|j| (squared_distance(x.row(row), x.row(j)), j))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .map(|(_, j)| j)
}

/// Generates the planned synthetic samples. Each minority sample draws from
/// its own stream seeded with `seed ^ row`, so output is order independent.
pub fn adasyn_generate(x: &FeatureMatrix, plan: &AdasynPlan, cfg: &AdasynConfig) -> Result<Synthesis> {
    let mut samples = FeatureMatrix::new(x.cols, Vec::new(), Vec::new())?;
    let mut parents = Vec::with_capacity(plan.total);
    let mut duplicated = 0;

    for (p, &row) in plan.minority_rows.iter().enumerate() {
        let n = plan.counts[p];
        if n == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ row as u64);
        let partners: Vec<usize> = plan.neighbors[p]
            .iter()
            .copied()
            .filter(|&j| x.labels[j] == plan.minority)
            .collect();
        let fallback = if partners.is_empty() {
            nearest_same_class(x, row, &plan.minority_rows)
        } else {
            None
        };
        for _ in 0..n {
            let partner = if partners.is_empty() {
                fallback
            } else {
                Some(partners[rng.gen_range(0..partners.len())])
            };
            match partner {
                Some(z) => {
                    let lambda: f64 = rng.gen();
                    samples.push_row(&interpolate(x.row(row), x.row(z), lambda), plan.minority);
                    parents.push((row, z));
                }
                None => {
                    samples.push_row(x.row(row), plan.minority);
                    parents.push((row, row));
                    duplicated += 1;
                }
            }
        }
    }
    if duplicated > 0 {
        log::warn!(
            "class {} has a single member; duplicated it {duplicated} times",
            plan.minority
        );
    }
    Ok(Synthesis {
        samples,
        parents,
        duplicated,
    })
}

/// Original rows followed by every class's synthetic rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Balanced {
    pub matrix: FeatureMatrix,
    /// Parents of rows `original_rows..`, in order.
    pub parents: Vec<(usize, usize)>,
    pub original_rows: usize,
    pub plans: Vec<AdasynPlan>,
    pub duplicated: usize,
}

impl Balanced {
    pub fn synthetic_rows(&self) -> usize {
        self.matrix.rows() - self.original_rows
    }
}

/// Oversamples every class smaller than the largest one toward the largest count.
pub fn balance_multiclass(x: &FeatureMatrix, cfg: &AdasynConfig) -> Result<Balanced> {
    let counts = x.class_counts();
    let present = counts.iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(AdasynError::TooFewClasses(present));
    }
    let majority = *counts.iter().max().unwrap();

    let mut matrix = x.clone();
    let mut parents = Vec::new();
    let mut plans = Vec::new();
    let mut duplicated = 0;
    for label in ClassLabel::ALL {
        let n = counts[label.code()];
        if n == 0 || n == majority {
            continue;
        }
        let plan = adasyn_plan(x, label, majority, cfg)?;
        let synth = adasyn_generate(x, &plan, cfg)?;
        matrix.values.extend_from_slice(&synth.samples.values);
        matrix.labels.extend_from_slice(&synth.samples.labels);
        parents.extend(synth.parents);
        duplicated += synth.duplicated;
        plans.push(plan);
    }
    Ok(Balanced {
        matrix,
        parents,
        original_rows: x.rows(),
        plans,
        duplicated,
    })
}
