use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::params::Parameterized;
use crate::error::{Error, Result};

/// Step-decay learning-rate schedule: `base * factor^(epoch / period)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub factor: f64,
    pub period: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule { base: 1e-3, factor: 0.1, period: 10 }
    }
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule { base: lr, factor: 1.0, period: usize::MAX }
    }

    pub fn at_epoch(&self, epoch: usize) -> f64 {
        let k = epoch / self.period.max(1);
        self.base * self.factor.powi(k as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub schedule: LrSchedule,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01, schedule: LrSchedule::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Matrix,
    pub v: Matrix,
    pub step: u64,
}

/// AdamW with decoupled weight decay and per-parameter moment state keyed
/// by parameter name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub epoch: usize,
    state: BTreeMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW { config, epoch: 0, state: BTreeMap::new() }
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.schedule.at_epoch(self.epoch)
    }

    pub fn set_epoch(&mut self, epoch: usize) {
        self.epoch = epoch;
    }

    pub fn moments(&self, name: &str) -> Option<&Moments> {
        self.state.get(name)
    }

    pub fn tracked(&self) -> impl Iterator<Item = &str> {
        self.state.keys().map(String::as_str)
    }

    /// Drops moment state for parameters that no longer exist.
    pub fn retain_params<P: Parameterized + ?Sized>(&mut self, params: &P) {
        let mut live = std::collections::BTreeSet::new();
        params.visit(&mut |name, _| {
            live.insert(name.to_string());
        });
        self.state.retain(|k, _| live.contains(k));
    }

    /// One update of every parameter that has an entry in `grads`.
    ///
    /// All gradients are validated before anything is written, so a
    /// non-finite gradient leaves parameters and state untouched.
    pub fn step<P: Parameterized + ?Sized>(&mut self, params: &mut P, grads: &BTreeMap<String, Matrix>) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::Numeric(format!("gradient of {}", name)));
            }
        }
        let mut shape_err = None;
        params.visit(&mut |name, p| {
            if let Some(g) = grads.get(name) {
                if !g.same_shape(p) && shape_err.is_none() {
                    shape_err =
                        Some(Error::dim("adamw_step", format!("{}: param {:?} grad {:?}", name, p.shape(), g.shape())));
                }
            }
        });
        if let Some(e) = shape_err {
            return Err(e);
        }

        let lr = self.learning_rate();
        let AdamWConfig { beta1, beta2, eps, weight_decay, .. } = self.config;
        let state = &mut self.state;
        params.visit_mut(&mut |name, p| {
            let Some(g) = grads.get(name) else { return };
            let entry = state.entry(name.to_string()).or_insert_with(|| Moments {
                m: Matrix::zeros(p.rows(), p.cols()),
                v: Matrix::zeros(p.rows(), p.cols()),
                step: 0,
            });
            entry.step += 1;
            let t = entry.step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            let m = entry.m.data_mut();
            let v = entry.v.data_mut();
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                let gi = g.data()[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *w -= lr * weight_decay * *w;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
        Ok(())
    }
}
