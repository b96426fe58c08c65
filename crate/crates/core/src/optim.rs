//! AdamW with decoupled weight decay and a per-epoch cosine-annealed rate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer and schedule settings shared by the autoencoder trainer and the
/// linear probes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// 31 epochs, batch 64, lr 1e-3 annealed to 1e-5, betas (0.9, 0.999),
    /// eps 1e-8, weight decay 1e-2.
    fn default() -> Self {
        Self {
            epochs: 31,
            batch: 64,
            lr: 1e-3,
            lr_min: 1e-5,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay: 1e-2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::param("epochs and batch must be >= 1"));
        }
        if !(self.lr > self.lr_min && self.lr_min > 0.0) {
            return Err(Error::param(format!("need lr > lr_min > 0, got lr = {}, lr_min = {}", self.lr, self.lr_min)));
        }
        let (b1, b2) = self.betas;
        if !(0.0 < b1 && b1 < 1.0 && 0.0 < b2 && b2 < 1.0) {
            return Err(Error::param(format!("betas must lie in (0, 1), got ({b1}, {b2})")));
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.weight_decay < 0.0 {
            return Err(Error::param("eps must be > 0 and weight_decay >= 0"));
        }
        Ok(())
    }

    /// Learning rate for `epoch` (0-based):
    /// `lr_min + (lr - lr_min) * (1 + cos(pi * epoch / epochs)) / 2`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let t = epoch as f64 / self.epochs as f64;
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Moment buffers for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    betas: (f64, f64),
    eps: f64,
    weight_decay: f64,
}

impl AdamW {
    pub fn new(n_params: usize, cfg: &TrainConfig) -> Self {
        Self {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
            betas: cfg.betas,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
        }
    }

    /// One update: decay, then bias-corrected Adam step.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let (b1, b2) = self.betas;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let decay = 1.0 - lr * self.weight_decay;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] = params[i] * decay - lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
