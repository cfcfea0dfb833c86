use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

pub const RMS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub rms_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// The learning rate is multiplied by `lr_decay` every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lr: 0.01, rms_decay: 0.9, momentum: 0.9, weight_decay: 1e-4, lr_decay: 0.94, lr_decay_every: 2 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, v) in [("rms_decay", self.rms_decay), ("momentum", self.momentum)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if self.weight_decay < 0.0 || self.lr_decay <= 0.0 || self.lr_decay_every == 0 {
            return Err(Error::Config("weight_decay >= 0, lr_decay > 0 and lr_decay_every >= 1 required".into()));
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_decay.powi((epoch / self.lr_decay_every) as i32)
    }
}

/// RMSProp with momentum:
///
/// ```text
/// g <- g + wd * w
/// v <- rho * v + (1 - rho) * g^2
/// m <- beta * m + g / sqrt(v + eps)
/// w <- w - lr * m
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T = f64> {
    pub config: OptimizerConfig,
    pub square_avg: Vec<T>,
    pub momentum_buf: Vec<T>,
    epoch: usize,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        Self { config, square_avg: vec![T::ZERO; num_params], momentum_buf: vec![T::ZERO; num_params], epoch: 0 }
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn lr(&self) -> f64 {
        self.config.lr_at(self.epoch)
    }

    /// Updates `params` in place. Entries with `mask[i] == false` are left
    /// untouched together with their accumulators.
    pub fn step(&mut self, params: &mut [T], grads: &[T], mask: Option<&[bool]>) -> Result<()> {
        let n = self.square_avg.len();
        if params.len() != n || grads.len() != n || mask.is_some_and(|m| m.len() != n) {
            return Err(Error::ShapeMismatch { expected: n, found: params.len() });
        }
        let c = &self.config;
        let (lr, wd) = (T::from_f64(self.lr()), T::from_f64(c.weight_decay));
        let (rho, beta, eps) = (T::from_f64(c.rms_decay), T::from_f64(c.momentum), T::from_f64(RMS_EPS));
        for i in 0..n {
            if mask.is_some_and(|m| !m[i]) {
                continue;
            }
            let g = grads[i] + wd * params[i];
            let v = rho * self.square_avg[i] + (T::ONE - rho) * g * g;
            let m = beta * self.momentum_buf[i] + g / (v + eps).sqrt();
            self.square_avg[i] = v;
            self.momentum_buf[i] = m;
            params[i] -= lr * m;
        }
        Ok(())
    }
}
