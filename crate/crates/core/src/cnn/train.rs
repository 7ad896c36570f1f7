use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::net::{backward_trace, forward_trace};
use super::{adam_step, check_params, AdamState, CnnError, NetworkSpec, Parameters, Result, LOG_CLAMP};
use crate::datamodel::{ClassLabel, ProbVector, Volume, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CnnError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("adam epsilon must be positive");
        }
        Ok(())
    }
}

/// Equal-sized single-channel images with labels, stored back to back.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledImages {
    pub image_len: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<ClassLabel>,
}

impl LabeledImages {
    pub fn new(image_len: usize) -> Self {
        Self {
            image_len,
            pixels: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn push(&mut self, image: &[f32], label: ClassLabel) {
        assert_eq!(image.len(), self.image_len, "image size");
        self.pixels.extend_from_slice(image);
        self.labels.push(label);
    }

    /// Adds every axial slice of a labeled volume.
    pub fn push_volume(&mut self, volume: &Volume, label: ClassLabel) {
        for z in 0..volume.depth() {
            self.push(volume.slice(z), label);
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.pixels[i * self.image_len..(i + 1) * self.image_len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: Parameters,
    pub history: Vec<EpochStats>,
}

/// He-uniform weights `U(±√(6/fan_in))`, zero biases, drawn in tensor order.
pub fn he_uniform_init<R: Rng>(spec: &NetworkSpec, rng: &mut R) -> Parameters {
    let mut params: Parameters = spec.zero_params();
    for t in params.tensors.iter_mut() {
        if t.role == super::ParamRole::Bias {
            continue;
        }
        let fan_in: usize = t.dims[1..].iter().product();
        let limit = (6.0 / fan_in as f64).sqrt() as f32;
        for v in t.data.iter_mut() {
            *v = rng.gen_range(-limit..limit);
        }
    }
    params
}

/// Seeded mini-batch training with Adam on mean cross-entropy.
pub fn train(spec: &NetworkSpec, data: &LabeledImages, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(CnnError::EmptyData);
    }
    if data.image_len != spec.input_len() {
        return Err(CnnError::Shape(format!(
            "images have {} pixels, network expects {}",
            data.image_len,
            spec.input_len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = he_uniform_init(spec, &mut rng);
    let mut state = AdamState::new(&params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0u64;
    let mut input = Vec::with_capacity(cfg.batch_size * data.image_len);
    let mut targets = Vec::with_capacity(cfg.batch_size);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            input.clear();
            targets.clear();
            for &i in chunk {
                input.extend_from_slice(data.image(i));
                targets.push(data.labels[i].code());
            }
            let trace = forward_trace(spec, &params, &input, chunk.len());
            for (row, &t) in trace.probabilities().chunks(NUM_CLASSES).zip(&targets) {
                loss_sum -= (row[t] as f64).max(LOG_CLAMP).ln();
                let pred = ProbVector::new([row[0] as f64, row[1] as f64, row[2] as f64])
                    .map(|p| p.argmax().code())
                    .unwrap_or(usize::MAX);
                correct += usize::from(pred == t);
            }
            let grads = backward_trace(spec, &params, &trace, &targets);
            step += 1;
            adam_step(&mut params, &grads, &mut state, cfg, step)?;
        }
        let stats = EpochStats {
            loss: loss_sum / data.len() as f64,
            accuracy: correct as f64 / data.len() as f64,
        };
        log::debug!("epoch {}: loss {:.6} accuracy {:.4}", history.len() + 1, stats.loss, stats.accuracy);
        history.push(stats);
    }
    Ok(TrainOutcome { params, history })
}

/// Checks that a volume's slices fit the network input.
pub fn subject_slices<'a>(spec: &NetworkSpec, volume: &'a Volume) -> Result<&'a [f32]> {
    let (c, h, w) = spec.input();
    if c != 1 || volume.height() != h || volume.width() != w {
        return Err(CnnError::Shape(format!(
            "volume slices are {}x{}, network expects {c}x{h}x{w}",
            volume.height(),
            volume.width()
        )));
    }
    Ok(volume.voxels())
}

/// Mean of per-slice probabilities over every axial slice, renormalized.
pub fn predict_subject(spec: &NetworkSpec, params: &Parameters, volume: &Volume) -> Result<ProbVector> {
    check_params(spec, params)?;
    let pixels = subject_slices(spec, volume)?;
    let trace = forward_trace(spec, params, pixels, volume.depth());
    mean_probability(trace.probabilities().chunks(NUM_CLASSES).map(|r| [r[0] as f64, r[1] as f64, r[2] as f64]))
}

pub(crate) fn mean_probability(rows: impl Iterator<Item = [f64; NUM_CLASSES]>) -> Result<ProbVector> {
    let mut sum = [0.0f64; NUM_CLASSES];
    let mut n = 0usize;
    for row in rows {
        for (s, v) in sum.iter_mut().zip(row) {
            *s += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(CnnError::EmptyData);
    }
    ProbVector::new(sum.map(|s| s / n as f64)).map_err(|e| CnnError::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::LayerSpec;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn slice_mean_aggregation() {
        let p = mean_probability([[0.6, 0.3, 0.1], [0.4, 0.5, 0.1]].into_iter()).unwrap();
        for (g, w) in p.values().iter().zip([0.5, 0.4, 0.1]) {
            assert!((g - w).abs() < 1e-12);
        }
        let single = mean_probability([[0.2, 0.3, 0.5]].into_iter()).unwrap();
        assert_eq!(single.values(), &[0.2, 0.3, 0.5]);
    }

    #[test]
    fn predict_subject_checks_dims_and_sums_to_one() {
        let spec = NetworkSpec::desk(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = he_uniform_init(&spec, &mut rng);
        let vol = Volume::new(4, 8, 8, (0..256).map(|i| (i as f32 * 0.1).sin()).collect()).unwrap();
        let p = predict_subject(&spec, &params, &vol).unwrap();
        assert!((p.values().iter().sum::<f64>() - 1.0).abs() < 1e-6);

        let single = Volume::new(1, 8, 8, vol.slice(2).to_vec()).unwrap();
        let direct = super::super::forward(&spec, &params, single.voxels(), 1).unwrap()[0];
        let via_subject = predict_subject(&spec, &params, &single).unwrap();
        for (a, b) in direct.values().iter().zip(via_subject.values()) {
            assert!((a - b).abs() < 1e-12);
        }

        let wrong = Volume::zeros(2, 8, 6).unwrap();
        assert!(matches!(predict_subject(&spec, &params, &wrong), Err(CnnError::Shape(_))));
    }

    #[test]
    fn config_and_data_validation() {
        let spec = NetworkSpec::desk(8, 8);
        let empty = LabeledImages::new(64);
        assert!(matches!(train(&spec, &empty, &TrainConfig::default()), Err(CnnError::EmptyData)));
        let mut data = LabeledImages::new(64);
        data.push(&[0.0; 64], ClassLabel::Hc);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&spec, &data, &cfg), Err(CnnError::InvalidConfig(_))));
        let mut wrong = LabeledImages::new(16);
        wrong.push(&[0.0; 16], ClassLabel::Hc);
        assert!(matches!(train(&spec, &wrong, &TrainConfig::default()), Err(CnnError::Shape(_))));
    }

    /// Three well separated Gaussian blobs rendered as 8×8 images.
    pub(crate) fn toy_blobs(seed: u64) -> LabeledImages {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0f32, 0.3).unwrap();
        let centers = [(2.0f32, 2.0f32), (5.0, 5.0), (2.0, 5.5)];
        let mut data = LabeledImages::new(64);
        for i in 0..64 {
            let label = ClassLabel::ALL[i % 3];
            let (cy, cx) = centers[label.code()];
            let img: Vec<f32> = (0..64)
                .map(|p| {
                    let (y, x) = ((p / 8) as f32, (p % 8) as f32);
                    (-((y - cy).powi(2) + (x - cx).powi(2)) / 2.0).exp() + noise.sample(&mut rng)
                })
                .collect();
            data.push(&img, label);
        }
        data
    }

    pub(crate) fn toy_spec() -> NetworkSpec {
        use LayerSpec::*;
        NetworkSpec::new(
            (1, 8, 8),
            vec![
                LayerSpec::conv3x3(4),
                Relu,
                MaxPool2d { window: 2, stride: 2 },
                Flatten,
                Dense { out_features: 3 },
                Softmax,
            ],
            3,
        )
        .unwrap()
    }

    pub(crate) fn toy_config() -> TrainConfig {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-2,
            seed: 42,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn toy_blobs_are_learned() {
        let out = train(&toy_spec(), &toy_blobs(7), &toy_config()).unwrap();
        assert_eq!(out.history.len(), 50);
        assert_eq!(out.history.last().unwrap().accuracy, 1.0);
        for w in out.history.windows(10) {
            assert!(w[9].loss <= w[0].loss, "{:?}", w);
        }
    }

    #[test]
    fn training_is_bit_reproducible() {
        let cfg = TrainConfig {
            epochs: 3,
            ..toy_config()
        };
        let a = train(&toy_spec(), &toy_blobs(1), &cfg).unwrap();
        let b = train(&toy_spec(), &toy_blobs(1), &cfg).unwrap();
        let bits = |p: &Parameters| -> Vec<u32> {
            p.tensors.iter().flat_map(|t| t.data.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&a.params), bits(&b.params));
        assert_eq!(a.history, b.history);
    }
}
