use std::fmt;
use std::str::FromStr;

use super::{
    fuse, majority_vote, model_average_weights, mra_weights, owaf_search, vote_counts, EnsembleOutputs,
    FusionError, FusionWeights, GridSearchConfig, OwafResult, Result,
};
use crate::datamodel::{ClassLabel, ProbVector};
use crate::eval::{evaluate, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Strategy {
    MajorityVote,
    ModelAverage,
    Mra,
    Owaf,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Strategy::MajorityVote, Strategy::ModelAverage, Strategy::Mra, Strategy::Owaf];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::MajorityVote => "vote",
            Strategy::ModelAverage => "avg",
            Strategy::Mra => "mra",
            Strategy::Owaf => "owaf",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Strategy::MajorityVote => "Majority Voting",
            Strategy::ModelAverage => "Model Average Fusion",
            Strategy::Mra => "Modulated Rank Average",
            Strategy::Owaf => "OWAF",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown strategy {s:?}, expected vote, avg, mra or owaf"))
    }
}

/// Everything fusion needs from the validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionPlan {
    pub accuracies: Vec<f64>,
    pub mra: FusionWeights,
    pub owaf: FusionWeights,
    /// Absent for a single model, where every weighting is trivially `[1]`.
    pub search: Option<OwafResult>,
}

impl FusionPlan {
    /// Model accuracies, MRA weights and the OWAF search, all on the validation set.
    pub fn tune(validation: &EnsembleOutputs, labels: &[ClassLabel], grid: &GridSearchConfig) -> Result<Self> {
        let accuracies = validation.accuracies(labels)?;
        if accuracies.len() == 1 {
            let one = FusionWeights::uniform(1)?;
            return Ok(Self {
                accuracies,
                mra: one.clone(),
                owaf: one,
                search: None,
            });
        }
        let mra = mra_weights(&accuracies)?;
        let search = owaf_search(&mra, validation, labels, grid)?;
        Ok(Self {
            accuracies,
            mra,
            owaf: search.weights.clone(),
            search: Some(search),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyResult {
    pub strategy: Strategy,
    /// `None` for majority voting.
    pub weights: Option<FusionWeights>,
    pub predictions: Vec<ClassLabel>,
    /// Fused probabilities, or vote shares for majority voting.
    pub scores: Vec<ProbVector>,
    pub metrics: MetricsReport,
}

/// Applies each strategy to the same outputs and scores it against `labels`.
pub fn fusion_report(
    ensemble: &EnsembleOutputs,
    labels: &[ClassLabel],
    plan: &FusionPlan,
    strategies: &[Strategy],
) -> Result<Vec<StrategyResult>> {
    ensemble.check_labels(labels)?;
    if plan.accuracies.len() != ensemble.models().len() {
        return Err(FusionError::LengthMismatch {
            weights: plan.accuracies.len(),
            models: ensemble.models().len(),
        });
    }
    strategies
        .iter()
        .map(|&strategy| {
            let (weights, predictions, scores) = match strategy {
                Strategy::MajorityVote => {
                    let mut predictions = Vec::with_capacity(ensemble.len());
                    let mut scores = Vec::with_capacity(ensemble.len());
                    for j in 0..ensemble.len() {
                        let row = ensemble.subject(j);
                        predictions.push(majority_vote(row)?);
                        let votes = vote_counts(row).map(|v| v as f64);
                        scores.push(ProbVector::new(votes).map_err(|e| FusionError::Ensemble(e.to_string()))?);
                    }
                    (None, predictions, scores)
                }
                other => {
                    let w = match other {
                        Strategy::ModelAverage => model_average_weights(&plan.accuracies)?,
                        Strategy::Mra => plan.mra.clone(),
                        _ => plan.owaf.clone(),
                    };
                    let scores = (0..ensemble.len())
                        .map(|j| fuse(&w, ensemble.subject(j)))
                        .collect::<Result<Vec<_>>>()?;
                    let predictions = scores.iter().map(ProbVector::argmax).collect();
                    (Some(w), predictions, scores)
                }
            };
            let metrics = evaluate(labels, &predictions)?;
            Ok(StrategyResult {
                strategy,
                weights,
                predictions,
                scores,
                metrics,
            })
        })
        .collect()
}
