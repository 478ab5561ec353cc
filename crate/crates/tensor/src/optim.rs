use crate::{Gradients, ParamStore, Result, Tensor, TensorError};

/// Inverse-square-root schedule with linear warmup:
/// `d_model^-0.5 · min(step^-0.5, step · warmup^-1.5)`.
///
/// Peaks at `step == warmup`.
pub fn lr_schedule(step: u64, model_dim: usize, warmup: u64) -> Result<f64> {
    if step == 0 {
        return Err(TensorError::ZeroStep);
    }
    let s = step as f64;
    let w = warmup as f64;
    Ok((model_dim as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub warmup_steps: u64,
    pub model_dim: usize,
    /// Multiplier on the schedule; 1.0 reproduces it exactly.
    pub lr_scale: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
            warmup_steps: 4000,
            model_dim: 256,
            lr_scale: 1.0,
        }
    }
}

impl AdamConfig {
    pub fn learning_rate(&self, step: u64) -> Result<f64> {
        Ok(self.lr_scale * lr_schedule(step, self.model_dim, self.warmup_steps)?)
    }
}

/// Adam with bias correction, driven by [`lr_schedule`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Restores optimizer state, e.g. from a checkpoint.
    pub fn from_state(config: AdamConfig, step: u64, m: Vec<Tensor>, v: Vec<Tensor>) -> Self {
        Self { config, step, m, v }
    }

    /// Number of updates applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.v
    }

    /// Applies one update and returns the learning rate used.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<f64> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(TensorError::ShapeMismatch {
                name: "parameter count".into(),
                expected: vec![params.len()],
                actual: vec![grads.len()],
            });
        }
        for (id, g) in grads.iter() {
            let p = params.get(id);
            if p.shape() != g.shape() || self.m[id.index()].shape() != p.shape() {
                return Err(TensorError::ShapeMismatch {
                    name: params.name(id).to_string(),
                    expected: p.shape().to_vec(),
                    actual: g.shape().to_vec(),
                });
            }
        }
        let t = self.step + 1;
        let lr = self.config.learning_rate(t)?;
        let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.epsilon);
        let c1 = 1.0 - b1.powi(t as i32);
        let c2 = 1.0 - b2.powi(t as i32);
        for (id, g) in grads.iter() {
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = g.data()[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        self.step = t;
        Ok(lr)
    }
}
