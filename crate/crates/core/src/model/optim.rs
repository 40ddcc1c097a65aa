use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr: 1e-2,
            clip: 5.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::Config("invalid Adam moments".into()));
        }
        Ok(())
    }
}

/// Sums per-node gradients into one dense buffer per parameter.
pub fn accumulate(params: &ParamStore, into: &mut [Tensor], grads: Vec<(usize, Tensor)>, scale: f64) {
    debug_assert_eq!(into.len(), params.len());
    for (id, g) in grads {
        for (a, b) in into[id].data.iter_mut().zip(&g.data) {
            *a += scale * b;
        }
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

pub struct Optimizer {
    cfg: OptimizerConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, params: &ParamStore) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            cfg,
            t: 0,
        }
    }

    /// One update; parameters are rounded to `f32` afterwards. Returns the
    /// gradient norm before clipping.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> f64 {
        let norm = global_norm(grads);
        let scale = if self.cfg.clip > 0.0 && norm > self.cfg.clip {
            self.cfg.clip / norm
        } else {
            1.0
        };
        self.t += 1;
        match self.cfg.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors.iter_mut().zip(grads) {
                    for (w, d) in p.data.iter_mut().zip(&g.data) {
                        *w -= self.cfg.lr * scale * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                for (k, (p, g)) in params.tensors.iter_mut().zip(grads).enumerate() {
                    let (m, v) = (&mut self.m[k].data, &mut self.v[k].data);
                    for i in 0..p.data.len() {
                        let d = g.data[i] * scale;
                        m[i] = b1 * m[i] + (1.0 - b1) * d;
                        v[i] = b2 * v[i] + (1.0 - b2) * d * d;
                        p.data[i] -= self.cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.cfg.eps);
                    }
                }
            }
        }
        params.quantize();
        norm
    }
}
