use std::cmp::Ordering;

use super::{fuse_class, EnsembleOutputs, FusionError, FusionWeights, Result};
use crate::datamodel::ClassLabel;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSearchConfig {
    pub radius: f64,
    pub step: f64,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        Self {
            radius: 0.05,
            step: 0.01,
        }
    }
}

impl GridSearchConfig {
    pub fn new(radius: f64, step: f64) -> Result<Self> {
        if !(step > 0.0 && step.is_finite() && radius.is_finite() && step <= radius) {
            return Err(FusionError::InvalidGrid { radius, step });
        }
        Ok(Self { radius, step })
    }

    /// Offsets per weight run over `k·step` for `k` in `-n..=n`.
    pub fn steps_per_side(&self) -> i64 {
        (self.radius / self.step + 1e-9).floor() as i64
    }

    pub fn candidate_count(&self, models: usize) -> usize {
        ((2 * self.steps_per_side() + 1) as usize).pow(models as u32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OwafResult {
    pub weights: FusionWeights,
    /// Winning offset per model, in grid steps.
    pub offsets: Vec<i64>,
    pub correct: usize,
    pub accuracy: f64,
    pub initial_accuracy: f64,
    /// Grid points visited, including any whose clamped weights were all zero.
    pub candidates: usize,
}

fn correct_count(weights: &FusionWeights, ensemble: &EnsembleOutputs, labels: &[ClassLabel]) -> Result<usize> {
    let mut correct = 0;
    for (j, &label) in labels.iter().enumerate() {
        if fuse_class(weights, ensemble.subject(j))? == label {
            correct += 1;
        }
    }
    Ok(correct)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Exhaustive search around `initial` for the weights with the best fused
/// accuracy. Candidates are clamped at zero and renormalized. Ties prefer the
/// clamped candidate closest to `initial` before renormalization, then the
/// lexicographically smallest offsets.
pub fn owaf_search(
    initial: &FusionWeights,
    ensemble: &EnsembleOutputs,
    labels: &[ClassLabel],
    cfg: &GridSearchConfig,
) -> Result<OwafResult> {
    let cfg = GridSearchConfig::new(cfg.radius, cfg.step)?;
    if labels.is_empty() || ensemble.is_empty() {
        return Err(FusionError::EmptyValidation);
    }
    if labels.len() != ensemble.len() {
        return Err(FusionError::Ensemble(format!(
            "{} labels for {} subjects",
            labels.len(),
            ensemble.len()
        )));
    }
    let models = ensemble.models().len();
    if initial.len() != models {
        return Err(FusionError::LengthMismatch {
            weights: initial.len(),
            models,
        });
    }

    let n = cfg.steps_per_side();
    let mut offsets = vec![-n; models];
    let initial_correct = correct_count(initial, ensemble, labels)?;
    let mut best: Option<(usize, f64, Vec<i64>, FusionWeights)> = None;
    let mut visited = 0;
    loop {
        visited += 1;
        let raw: Vec<f64> = initial
            .values()
            .iter()
            .zip(&offsets)
            .map(|(w, &k)| (w + k as f64 * cfg.step).max(0.0))
            .collect();
        let dist = distance(&raw, initial.values());
        if let Ok(weights) = FusionWeights::new(raw) {
            let correct = correct_count(&weights, ensemble, labels)?;
            // offsets are enumerated in lexicographic order, so an equal key never replaces
            let better = match &best {
                None => true,
                Some((c, d, _, _)) => match correct.cmp(c) {
                    Ordering::Greater => true,
                    Ordering::Less => false,
                    Ordering::Equal => dist < *d,
                },
            };
            if better {
                best = Some((correct, dist, offsets.clone(), weights));
            }
        }
        // odometer increment, last model fastest
        let mut i = models;
        loop {
            if i == 0 {
                let (correct, _, offsets, weights) = best.expect("zero offset is always a valid candidate");
                let total = labels.len() as f64;
                return Ok(OwafResult {
                    weights,
                    offsets,
                    correct,
                    accuracy: correct as f64 / total,
                    initial_accuracy: initial_correct as f64 / total,
                    candidates: visited,
                });
            }
            i -= 1;
            if offsets[i] < n {
                offsets[i] += 1;
                break;
            }
            offsets[i] = -n;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::ProbVector;
    use proptest::prelude::*;

    fn pv(a: f64, b: f64, c: f64) -> ProbVector {
        ProbVector::new([a, b, c]).unwrap()
    }

    fn ensemble(rows: Vec<Vec<ProbVector>>) -> EnsembleOutputs {
        let models = (0..rows[0].len()).map(|i| format!("m{i}")).collect();
        let subjects = (0..rows.len()).map(|j| format!("s{j:03}")).collect();
        EnsembleOutputs::new(models, subjects, rows).unwrap()
    }

    #[test]
    fn grid_size_formula() {
        assert_eq!(GridSearchConfig::default().candidate_count(4), 14_641);
        let e = ensemble(vec![vec![pv(0.6, 0.3, 0.1); 4]]);
        let w = FusionWeights::uniform(4).unwrap();
        let r = owaf_search(&w, &e, &[ClassLabel::Hc], &GridSearchConfig::new(0.01, 0.01).unwrap()).unwrap();
        assert_eq!(r.candidates, 81);
        assert!(GridSearchConfig::new(0.01, 0.02).is_err());
        assert!(GridSearchConfig::new(0.05, 0.0).is_err());
    }

    #[test]
    fn perfect_initial_weights_are_kept() {
        let e = ensemble(vec![
            vec![pv(0.8, 0.1, 0.1), pv(0.6, 0.3, 0.1)],
            vec![pv(0.1, 0.1, 0.8), pv(0.2, 0.2, 0.6)],
        ]);
        let w = FusionWeights::new(vec![0.6, 0.4]).unwrap();
        let r = owaf_search(&w, &e, &[ClassLabel::Hc, ClassLabel::Swedd], &GridSearchConfig::default()).unwrap();
        assert_eq!(r.weights, w);
        assert_eq!(r.offsets, vec![0, 0]);
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn one_step_shift_fixes_a_subject() {
        // subject 0 is HC only once model 0 carries more than 0.41 / 0.81 of the weight
        let e = ensemble(vec![
            vec![pv(0.7, 0.3, 0.0), pv(0.295, 0.705, 0.0)],
            vec![pv(0.9, 0.1, 0.0), pv(0.9, 0.1, 0.0)],
        ]);
        let w = FusionWeights::new(vec![0.5, 0.5]).unwrap();
        let labels = [ClassLabel::Hc, ClassLabel::Hc];
        assert_eq!(correct_count(&w, &e, &labels).unwrap(), 1);
        let r = owaf_search(&w, &e, &labels, &GridSearchConfig::default()).unwrap();
        assert_eq!(r.correct, 2);
        assert_eq!(r.initial_accuracy, 0.5);
        assert_eq!(r.accuracy, 1.0);
        assert!(r.weights.values()[0] > 0.41 / 0.81);
    }

    #[test]
    fn errors() {
        let e = ensemble(vec![vec![pv(0.6, 0.3, 0.1); 2]]);
        let w = FusionWeights::uniform(2).unwrap();
        assert_eq!(
            owaf_search(&w, &e, &[], &GridSearchConfig::default()),
            Err(FusionError::EmptyValidation)
        );
        let w3 = FusionWeights::uniform(3).unwrap();
        assert!(owaf_search(&w3, &e, &[ClassLabel::Hc], &GridSearchConfig::default()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn never_worse_than_initial(
            rows in prop::collection::vec(prop::collection::vec(prop::array::uniform3(0.0f64..1.0), 3), 1..12),
            labels in prop::collection::vec(0..3usize, 12),
            w in prop::collection::vec(0.05f64..1.0, 3),
        ) {
            let rows: Vec<Vec<ProbVector>> = rows
                .into_iter()
                .map(|r| r.into_iter().map(|p| ProbVector::new(p.map(|v| v + 1e-3)).unwrap()).collect())
                .collect();
            let labels: Vec<ClassLabel> = (0..rows.len()).map(|j| ClassLabel::from_code(labels[j]).unwrap()).collect();
            let e = ensemble(rows);
            let w = FusionWeights::new(w).unwrap();
            let r = owaf_search(&w, &e, &labels, &GridSearchConfig::new(0.02, 0.01).unwrap()).unwrap();
            prop_assert!(r.accuracy >= r.initial_accuracy);
            prop_assert!((r.weights.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
}
