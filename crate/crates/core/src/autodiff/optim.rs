use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Anneal the learning rate over the epochs with a half cosine.
    pub cosine_decay: bool,
}

impl AdamConfig {
    /// Learning rate for `epoch` of `epochs`.
    pub fn learning_rate_at(&self, epoch: usize, epochs: usize) -> f64 {
        if !self.cosine_decay || epochs == 0 {
            return self.learning_rate;
        }
        let progress = epoch as f64 / epochs as f64;
        self.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
            cosine_decay: false,
        }
    }
}

/// Adaptive-moment optimiser state, one moment pair per parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let first: Vec<Vec<f64>> = store.tensors().iter().map(|t| vec![0.0; t.numel()]).collect();
        Adam {
            config,
            second: first.clone(),
            first,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Zero both moments for selected rows of a 2D parameter.
    pub fn reset_rows(&mut self, param: usize, row_len: usize, rows: &[usize]) {
        for &r in rows {
            self.first[param][r * row_len..(r + 1) * row_len].fill(0.0);
            self.second[param][r * row_len..(r + 1) * row_len].fill(0.0);
        }
    }

    /// One bias-corrected update. Fails without touching `store` if any
    /// gradient is non-finite or misshaped.
    pub fn update(&mut self, store: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        for (i, (g, t)) in grads.iter().zip(store.tensors()).enumerate() {
            if g.len() != t.numel() {
                return Err(Error::dim(format!("gradient {} has wrong length", i)));
            }
            if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training {
                    epoch: 0,
                    batch: 0,
                    message: format!("non-finite gradient in parameter {} at element {}", i, pos),
                });
            }
        }
        let clip = match self.config.clip_norm {
            Some(max) => {
                let norm = grads.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, t) in store.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                let gj = grads[i][j] * clip;
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= learning_rate * mhat / (vhat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
