use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers for a fixed, ordered list of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (vec![0.0; p.numel()], vec![0.0; p.numel()]))
            .unzip();
        Self { config, m, v, t: 0 }
    }

    /// One bias-corrected Adam update with decoupled weight decay.
    ///
    /// Each parameter's gradient is read from `Tensor::grad`; a missing gradient
    /// counts as zero. Decay `p ← p − lr·wd·p` is applied before the Adam delta.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], lr: f64, weight_decay: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::param(format!("learning rate {lr} must be positive")));
        }
        if params.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (i, p) in params.iter().enumerate() {
            if p.numel() != self.m[i].len() {
                return Err(Error::shape(format!(
                    "parameter {i} has {} values, optimizer state has {}",
                    p.numel(),
                    self.m[i].len()
                )));
            }
            if let Some(g) = &p.grad {
                if g.len() != p.numel() {
                    return Err(Error::shape(format!(
                        "gradient {i} has {} values for a parameter of {}",
                        g.len(),
                        p.numel()
                    )));
                }
                if let Some(pos) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::Training {
                        epoch: 0,
                        batch: 0,
                        message: format!("non-finite gradient in parameter {i} at element {pos}"),
                    });
                }
            }
        }

        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powf(self.t as f64);
        let bc2 = 1.0 - beta2.powf(self.t as f64);
        for (i, p) in params.iter_mut().enumerate() {
            let grad = p.grad.take();
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = p.data_mut();
            for j in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= lr * weight_decay * data[j];
                data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.grad = grad;
        }
        Ok(())
    }
}
