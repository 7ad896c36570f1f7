//! Small convolutional classifier trained from scratch: forward pass, exact
//! backpropagation, Adam, cross-entropy and subject-level prediction.

mod adam;
mod checkpoint;
mod gradcheck;
mod net;
mod spec;
mod tensor;
mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{
    decode_params, encode_params, read_checkpoint, sidecar_path, write_checkpoint, CHECKPOINT_MAGIC,
};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use net::softmax_input_gradient;
pub use spec::{LayerSpec, NetworkSpec, Shape};
pub use tensor::{gemm, Gradients, Op, ParamRole, ParamSet, Parameters, Scalar, Tensor};
pub use train::{
    he_uniform_init, predict_subject, subject_slices, train, EpochStats, LabeledImages, TrainConfig,
    TrainOutcome,
};

use crate::datamodel::{ClassLabel, ProbVector, NUM_CLASSES};

/// Probabilities are clamped to this floor before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum CnnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("non-finite parameter in {0} after optimizer step")]
    NonFiniteParameter(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training data is empty")]
    EmptyData,
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: std::path::PathBuf, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, CnnError>;

fn check_params<T: Scalar>(spec: &NetworkSpec, params: &ParamSet<T>) -> Result<()> {
    let want = spec.param_shapes();
    if want.len() != params.tensors.len()
        || want
            .iter()
            .zip(&params.tensors)
            .any(|((_, _, dims), t)| *dims != t.dims || t.data.len() != dims.iter().product::<usize>())
    {
        return Err(CnnError::Shape("parameters do not match the network spec".into()));
    }
    Ok(())
}

fn check_batch(spec: &NetworkSpec, batch: &[f32], count: usize) -> Result<()> {
    if batch.len() != count * spec.input_len() {
        return Err(CnnError::Shape(format!(
            "batch of {count} images needs {} values, got {}",
            count * spec.input_len(),
            batch.len()
        )));
    }
    Ok(())
}

/// Class probabilities for `count` images stored back to back in `batch`.
pub fn forward(spec: &NetworkSpec, params: &Parameters, batch: &[f32], count: usize) -> Result<Vec<ProbVector>> {
    check_params(spec, params)?;
    check_batch(spec, batch, count)?;
    let trace = net::forward_trace(spec, params, batch, count);
    trace
        .probabilities()
        .chunks(NUM_CLASSES)
        .map(|row| {
            ProbVector::new([row[0] as f64, row[1] as f64, row[2] as f64])
                .map_err(|e| CnnError::Shape(e.to_string()))
        })
        .collect()
}

/// Mean over rows of `−Σ_j y_j log max(p_j, 1e-12)`.
pub fn cross_entropy(pred: &[[f64; NUM_CLASSES]], target: &[[f64; NUM_CLASSES]]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(CnnError::Shape(format!(
            "{} prediction rows vs {} target rows",
            pred.len(),
            target.len()
        )));
    }
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, y)| {
            -p.iter()
                .zip(y)
                .map(|(&pj, &yj)| if yj == 0.0 { 0.0 } else { yj * pj.max(LOG_CLAMP).ln() })
                .sum::<f64>()
        })
        .sum();
    Ok(total / pred.len() as f64)
}

pub fn one_hot(label: ClassLabel) -> [f64; NUM_CLASSES] {
    let mut v = [0.0; NUM_CLASSES];
    v[label.code()] = 1.0;
    v
}

/// Gradients of the mean cross-entropy over the batch with respect to every parameter.
pub fn backward(
    spec: &NetworkSpec,
    params: &Parameters,
    batch: &[f32],
    targets: &[ClassLabel],
) -> Result<Gradients> {
    check_params(spec, params)?;
    check_batch(spec, batch, targets.len())?;
    if targets.is_empty() {
        return Err(CnnError::EmptyData);
    }
    let trace = net::forward_trace(spec, params, batch, targets.len());
    let codes: Vec<usize> = targets.iter().map(|t| t.code()).collect();
    Ok(net::backward_trace(spec, params, &trace, &codes))
}
