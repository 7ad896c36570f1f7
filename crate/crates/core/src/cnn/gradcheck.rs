use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::net::{backward_trace, forward_trace, Trace};
use super::{check_batch, check_params, CnnError, NetworkSpec, ParamSet, Parameters, Result, LOG_CLAMP};
use crate::datamodel::ClassLabel;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Initial finite-difference step.
    pub step: f64,
    /// Smallest step tried when a perturbation crosses a ReLU or pooling boundary.
    pub min_step: f64,
    /// Check at most this many entries per tensor; `None` checks all of them.
    pub per_tensor: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            min_step: 1e-9,
            per_tensor: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|a − n| / max(|a|, |n|, 1e-8)` over checked entries.
    pub max_rel_error: f64,
    /// Entry with the largest error as (tensor, index, analytic, numeric).
    pub worst: Option<(usize, usize, f64, f64)>,
    pub checked: usize,
    /// Entries where every step down to `min_step` changed the activation pattern.
    pub skipped: usize,
}

fn loss(trace: &Trace<f64>, targets: &[usize]) -> f64 {
    let classes = trace.probabilities().len() / trace.batch;
    let total: f64 = trace
        .probabilities()
        .chunks(classes)
        .zip(targets)
        .map(|(row, &t)| -row[t].max(LOG_CLAMP).ln())
        .sum();
    total / trace.batch as f64
}

/// Compares backpropagated gradients with central differences, both in `f64`.
pub fn gradient_check(
    spec: &NetworkSpec,
    params: &Parameters,
    images: &[f32],
    labels: &[ClassLabel],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    check_params(spec, params)?;
    check_batch(spec, images, labels.len())?;
    if labels.is_empty() {
        return Err(CnnError::EmptyData);
    }
    if !(opts.step > 0.0 && opts.min_step > 0.0 && opts.min_step <= opts.step) {
        return Err(CnnError::InvalidConfig("finite-difference steps must satisfy 0 < min_step <= step".into()));
    }
    let input: Vec<f64> = images.iter().map(|&v| v as f64).collect();
    let targets: Vec<usize> = labels.iter().map(|l| l.code()).collect();
    let batch = labels.len();
    let mut shadow: ParamSet<f64> = params.cast();

    let base = forward_trace(spec, &shadow, &input, batch);
    let pattern = base.activation_pattern(spec);
    let analytic = backward_trace(spec, &shadow, &base, &targets);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        skipped: 0,
    };
    for ti in 0..shadow.tensors.len() {
        let len = shadow.tensors[ti].len();
        let mut picks: Vec<usize> = match opts.per_tensor {
            Some(n) if n < len => sample(&mut rng, len, n).into_vec(),
            _ => (0..len).collect(),
        };
        picks.sort_unstable();
        for j in picks {
            let original = shadow.tensors[ti].data[j];
            let mut h = opts.step;
            let numeric = loop {
                // Richardson extrapolation of two central differences, h and h/2
                let mut diff = |step: f64| {
                    shadow.tensors[ti].data[j] = original + step;
                    let plus = forward_trace(spec, &shadow, &input, batch);
                    shadow.tensors[ti].data[j] = original - step;
                    let minus = forward_trace(spec, &shadow, &input, batch);
                    shadow.tensors[ti].data[j] = original;
                    let same = plus.activation_pattern(spec) == pattern && minus.activation_pattern(spec) == pattern;
                    same.then(|| (loss(&plus, &targets) - loss(&minus, &targets)) / (2.0 * step))
                };
                if let (Some(wide), Some(narrow)) = (diff(h), diff(h / 2.0)) {
                    break Some((4.0 * narrow - wide) / 3.0);
                }
                h /= 2.0;
                if h < opts.min_step {
                    break None;
                }
            };
            let Some(numeric) = numeric else {
                report.skipped += 1;
                continue;
            };
            let a = analytic.tensors[ti].data[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst = Some((ti, j, a, numeric));
            }
        }
    }
    Ok(report)
}
