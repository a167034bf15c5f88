use serde::{Deserialize, Serialize};

use super::tensor::Mat;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-7, batch_size: 1, max_epochs: 100, early_stop_patience: 10, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.lr) || !pos(self.epsilon) {
            return Err(Error::InvalidInput("lr and epsilon must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidInput("betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.early_stop_patience == 0 {
            return Err(Error::InvalidInput("batch_size, max_epochs and early_stop_patience must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moments per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub t: u64,
    pub m: Vec<Mat<T>>,
    pub v: Vec<Mat<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Mat<T>]) -> Self {
        let zeros = || params.iter().map(|p| Mat::zeros(p.rows, p.cols)).collect();
        Self { t: 0, m: zeros(), v: zeros() }
    }
}

/// One bias-corrected Adam update: `θ -= lr · m̂ / (√v̂ + ε)`.
pub fn adam_step<T: Real>(params: &mut [Mat<T>], grads: &[Mat<T>], state: &mut AdamState<T>, cfg: &TrainConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::ShapeMismatch("parameter, gradient and optimizer state counts differ".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch(format!("parameter {:?} vs gradient {:?}", p.shape(), g.shape())));
        }
        for (((pi, gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
            let g = gi.as_f64();
            let mn = cfg.beta1 * mi.as_f64() + (1.0 - cfg.beta1) * g;
            let vn = cfg.beta2 * vi.as_f64() + (1.0 - cfg.beta2) * g * g;
            *mi = T::lit(mn);
            *vi = T::lit(vn);
            let step = cfg.lr * (mn / c1) / ((vn / c2).sqrt() + cfg.epsilon);
            *pi = T::lit(pi.as_f64() - step);
        }
    }
    Ok(())
}
