use super::{CnnError, Gradients, Parameters, Result, TrainConfig};

/// First and second moment estimates, kept in 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &Parameters) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(
    params: &mut Parameters,
    grads: &Gradients,
    state: &mut AdamState,
    cfg: &TrainConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(CnnError::InvalidConfig("adam step index starts at 1".into()));
    }
    if grads.tensors.len() != params.tensors.len()
        || state.m.len() != params.tensors.len()
        || params
            .tensors
            .iter()
            .zip(&grads.tensors)
            .zip(&state.m)
            .any(|((p, g), m)| p.len() != g.len() || p.len() != m.len())
    {
        return Err(CnnError::Shape("gradients or optimizer state do not match parameters".into()));
    }
    if let Some(bad) = grads.tensors.iter().find(|g| g.data.iter().any(|v| !v.is_finite())) {
        return Err(CnnError::NonFiniteGradient(bad.describe()));
    }

    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t.min(i32::MAX as u64) as i32);
    let c2 = 1.0 - b2.powi(t.min(i32::MAX as u64) as i32);
    for (i, (p, g)) in params.tensors.iter_mut().zip(&grads.tensors).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.data.len() {
            let gj = g.data[j] as f64;
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p.data[j] = (p.data[j] as f64 - cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon)) as f32;
        }
        if p.data.iter().any(|v| !v.is_finite()) {
            return Err(CnnError::NonFiniteParameter(p.describe()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::{LayerSpec, NetworkSpec};

    fn setup() -> (Parameters, TrainConfig) {
        let spec = NetworkSpec::new(
            (1, 1, 2),
            vec![LayerSpec::Flatten, LayerSpec::Dense { out_features: 3 }, LayerSpec::Softmax],
            3,
        )
        .unwrap();
        let mut p = spec.zero_params::<f32>();
        for (i, v) in p.tensors[0].data.iter_mut().enumerate() {
            *v = i as f32 * 0.1 - 0.2;
        }
        (p, TrainConfig::default())
    }

    fn filled(p: &Parameters, value: f32) -> Gradients {
        let mut g = p.zeros_like();
        for t in &mut g.tensors {
            t.data.fill(value);
        }
        g
    }

    #[test]
    fn zero_gradient_from_fresh_state_leaves_params() {
        let (mut p, cfg) = setup();
        let before = p.clone();
        let mut state = AdamState::new(&p);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut state, &cfg, 1).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn zero_gradient_decays_moments() {
        let (mut p, cfg) = setup();
        let mut state = AdamState::new(&p);
        let g = filled(&p, 0.5);
        adam_step(&mut p, &g, &mut state, &cfg, 1).unwrap();
        let (m0, v0) = (state.m[0][0], state.v[0][0]);
        let zero = p.zeros_like();
        adam_step(&mut p, &zero, &mut state, &cfg, 2).unwrap();
        assert!((state.m[0][0] - 0.9 * m0).abs() < 1e-15);
        assert!((state.v[0][0] - 0.999 * v0).abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_step_approaches_learning_rate() {
        let (mut p, cfg) = setup();
        let mut state = AdamState::new(&p);
        for (g, sign) in [(0.3f32, -1.0), (-2.0, 1.0)] {
            let grads = filled(&p, g);
            for t in 1..=200 {
                let before = p.tensors[0].data[0];
                adam_step(&mut p, &grads, &mut state, &cfg, t).unwrap();
                let step = (p.tensors[0].data[0] - before) as f64;
                if t == 200 {
                    assert!((step - sign * cfg.learning_rate).abs() < 1e-2 * cfg.learning_rate, "{step}");
                }
            }
            state = AdamState::new(&p);
        }
    }

    #[test]
    fn identical_calls_are_deterministic() {
        let (p, cfg) = setup();
        let grads = filled(&p, 0.7);
        let run = || {
            let mut q = p.clone();
            let mut s = AdamState::new(&q);
            adam_step(&mut q, &grads, &mut s, &cfg, 1).unwrap();
            (q, s)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let (mut p, cfg) = setup();
        let mut grads = p.zeros_like();
        grads.tensors[1].data[2] = f32::NAN;
        let mut state = AdamState::new(&p);
        match adam_step(&mut p, &grads, &mut state, &cfg, 1) {
            Err(CnnError::NonFiniteGradient(name)) => assert_eq!(name, "layer 1 bias"),
            other => panic!("{other:?}"),
        }
        let zero = p.zeros_like();
        assert!(adam_step(&mut p, &zero, &mut state, &cfg, 0).is_err());
    }
}
