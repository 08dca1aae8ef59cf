//! Lion: sign-of-momentum updates with constant per-coordinate magnitude.
//!
//! c = beta1 * m + (1 - beta1) * g
//! theta <- theta - lr * (sign(c) + weight_decay * theta)
//! m <- beta2 * m + (1 - beta2) * g

use super::{validate_gradients, OptimError, Optimizer, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LionConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

impl Default for LionConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.0,
        }
    }
}

pub struct Lion {
    cfg: LionConfig,
    lr: f64,
    momentum: Vec<Option<Vec<f64>>>,
}

impl Lion {
    pub fn new(cfg: LionConfig) -> Result<Self> {
        if !(cfg.lr > 0.0) {
            return Err(OptimError::InvalidConfig("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(OptimError::InvalidConfig("betas must lie in [0, 1)".into()));
        }
        if cfg.weight_decay < 0.0 {
            return Err(OptimError::InvalidConfig("weight_decay must be non-negative".into()));
        }
        let lr = cfg.lr;
        Ok(Self {
            cfg,
            lr,
            momentum: Vec::new(),
        })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Optimizer for Lion {
    fn step(&mut self, params: &mut [Tensor]) -> Result<()> {
        validate_gradients(params)?;
        if self.momentum.len() < params.len() {
            self.momentum.resize_with(params.len(), || None);
        }
        for (index, p) in params.iter_mut().enumerate() {
            if !p.requires_grad() {
                continue;
            }
            let n = p.numel();
            let m = self.momentum[index].get_or_insert_with(|| vec![0.0; n]);
            if m.len() != n {
                return Err(OptimError::StateMismatch {
                    index,
                    state: m.len(),
                    got: n,
                });
            }
            let Some(grad) = p.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
            let wd = self.cfg.weight_decay;
            let theta = p.data_mut();
            for i in 0..n {
                let c = b1 * m[i] + (1.0 - b1) * grad[i];
                theta[i] -= self.lr * (sign(c) + wd * theta[i]);
                m[i] = b2 * m[i] + (1.0 - b2) * grad[i];
            }
        }
        Ok(())
    }

    fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    fn lr(&self) -> f64 {
        self.lr
    }
}
