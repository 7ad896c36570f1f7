//! Decision-level fusion of per-model class probabilities.

mod ensemble;
mod owaf;
mod report;

pub use ensemble::{read_ensemble, read_labels, write_ensemble, write_labels, EnsembleOutputs};
pub use owaf::{owaf_search, GridSearchConfig, OwafResult};
pub use report::{fusion_report, FusionPlan, Strategy, StrategyResult};

use crate::datamodel::{ClassLabel, ProbVector, NUM_CLASSES};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("{weights} weights for {models} models")]
    LengthMismatch { weights: usize, models: usize },
    #[error("no models to fuse")]
    NoModels,
    #[error("weights must be finite and non-negative with a positive sum: {0:?}")]
    InvalidWeights(Vec<f64>),
    #[error("accuracies must be finite and non-negative with a positive sum: {0:?}")]
    InvalidAccuracies(Vec<f64>),
    #[error("rank averaging needs at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("validation set is empty")]
    EmptyValidation,
    #[error("grid search needs 0 < step <= radius (radius {radius}, step {step})")]
    InvalidGrid { radius: f64, step: f64 },
    #[error("ensemble: {0}")]
    Ensemble(String),
    #[error("metrics: {0}")]
    Metrics(#[from] crate::eval::MetricsError),
}

pub type Result<T> = std::result::Result<T, FusionError>;

/// Non-negative model weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights(Vec<f64>);

impl FusionWeights {
    /// Normalizes `raw` to sum to one.
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        let sum: f64 = raw.iter().sum();
        if raw.is_empty() || raw.iter().any(|w| !w.is_finite() || *w < 0.0) || !(sum > 0.0) || !sum.is_finite() {
            return Err(FusionError::InvalidWeights(raw));
        }
        Ok(Self(raw.into_iter().map(|w| w / sum).collect()))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `PF_j = Σ_i w_i p_ij`, renormalized.
pub fn fuse(weights: &FusionWeights, probs: &[ProbVector]) -> Result<ProbVector> {
    if weights.len() != probs.len() {
        return Err(FusionError::LengthMismatch {
            weights: weights.len(),
            models: probs.len(),
        });
    }
    let mut pf = [0.0; NUM_CLASSES];
    for (w, p) in weights.values().iter().zip(probs) {
        for (acc, v) in pf.iter_mut().zip(p.values()) {
            *acc += w * v;
        }
    }
    ProbVector::new(pf).map_err(|_| FusionError::InvalidWeights(weights.values().to_vec()))
}

/// Fused class for one subject; ties go to the lowest class code.
pub fn fuse_class(weights: &FusionWeights, probs: &[ProbVector]) -> Result<ClassLabel> {
    Ok(fuse(weights, probs)?.argmax())
}

/// Vote count per class, in class-code order.
pub fn vote_counts(probs: &[ProbVector]) -> [usize; NUM_CLASSES] {
    let mut votes = [0; NUM_CLASSES];
    for p in probs {
        votes[p.argmax().code()] += 1;
    }
    votes
}

/// Plurality of per-model argmax votes. Ties go to the class with the larger
/// summed probability across models, then to the lowest class code.
pub fn majority_vote(probs: &[ProbVector]) -> Result<ClassLabel> {
    if probs.is_empty() {
        return Err(FusionError::NoModels);
    }
    let votes = vote_counts(probs);
    let mut mass = [0.0; NUM_CLASSES];
    for p in probs {
        for (m, v) in mass.iter_mut().zip(p.values()) {
            *m += v;
        }
    }
    let mut best = 0;
    for k in 1..NUM_CLASSES {
        if votes[k] > votes[best] || (votes[k] == votes[best] && mass[k] > mass[best]) {
            best = k;
        }
    }
    Ok(ClassLabel::ALL[best])
}

/// Weights proportional to accuracy.
pub fn model_average_weights(accuracies: &[f64]) -> Result<FusionWeights> {
    FusionWeights::new(accuracies.to_vec()).map_err(|_| FusionError::InvalidAccuracies(accuracies.to_vec()))
}

pub fn model_average(probs: &[ProbVector], accuracies: &[f64]) -> Result<ProbVector> {
    fuse(&model_average_weights(accuracies)?, probs)
}

/// Modulated rank averaging.
///
/// Models are sorted by accuracy, best first (stable, so equal accuracies keep
/// input order) and ranked N down to 1. The model at sorted position `p ≥ 2`
/// gets `f = R_p + (a_{p-1} − a_p)`, the best model gets `R_max = N`, and all
/// are divided by `Σ f + R_max`.
pub fn mra_weights(accuracies: &[f64]) -> Result<FusionWeights> {
    let n = accuracies.len();
    if n < 2 {
        return Err(FusionError::TooFewModels(n));
    }
    if accuracies.iter().any(|a| !a.is_finite() || !(0.0..=1.0).contains(a)) {
        return Err(FusionError::InvalidAccuracies(accuracies.to_vec()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| accuracies[j].total_cmp(&accuracies[i]));
    let mut numer = vec![0.0; n];
    numer[order[0]] = n as f64;
    for p in 1..n {
        let rank = (n - p) as f64;
        numer[order[p]] = rank + (accuracies[order[p - 1]] - accuracies[order[p]]);
    }
    let denom: f64 = numer.iter().sum();
    Ok(FusionWeights(numer.into_iter().map(|f| f / denom).collect()))
}
