use serde::{Deserialize, Serialize};

use super::params::PolicyParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global-norm gradient clipping; `None` disables it.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: Some(5.0),
        }
    }
}

/// Adam with bias-corrected moments.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    /// Per-tensor learning rates overriding `config.lr`.
    lr_overrides: Vec<(&'static str, f64)>,
    m: PolicyParams,
    v: PolicyParams,
    t: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, like: &PolicyParams) -> Self {
        Self {
            config,
            lr_overrides: Vec::new(),
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
        }
    }

    pub fn set_tensor_lr(&mut self, name: &'static str, lr: f64) {
        self.lr_overrides.retain(|(n, _)| *n != name);
        self.lr_overrides.push((name, lr));
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update and returns the gradient norm before clipping.
    pub fn step(&mut self, params: &mut PolicyParams, grads: &PolicyParams) -> Result<f64> {
        let norm = grads.norm();
        if !norm.is_finite() {
            return Err(Error::Numerical(format!("gradient norm {norm}")));
        }
        let clip = match self.config.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for ((((name, p), (_, _, g)), (_, m)), (_, v)) in tensors {
            let lr = self
                .lr_overrides
                .iter()
                .find(|(n, _)| *n == name)
                .map_or(lr, |o| o.1);
            for i in 0..p.len() {
                let gi = g[i] * clip;
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
        Ok(norm)
    }
}
