//! Adam with bias correction.

use super::{validate_gradients, OptimError, Optimizer, Result};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    t: u64,
    slots: Vec<Option<Slot>>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        if !(cfg.lr > 0.0) {
            return Err(OptimError::InvalidConfig("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(OptimError::InvalidConfig("betas must lie in [0, 1)".into()));
        }
        if !(cfg.eps > 0.0) {
            return Err(OptimError::InvalidConfig("eps must be positive".into()));
        }
        if cfg.weight_decay < 0.0 {
            return Err(OptimError::InvalidConfig("weight_decay must be non-negative".into()));
        }
        let lr = cfg.lr;
        Ok(Self {
            cfg,
            lr,
            t: 0,
            slots: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [Tensor]) -> Result<()> {
        validate_gradients(params)?;
        if self.slots.len() < params.len() {
            self.slots.resize_with(params.len(), || None);
        }
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for (index, p) in params.iter_mut().enumerate() {
            if !p.requires_grad() {
                continue;
            }
            let n = p.numel();
            let slot = self.slots[index].get_or_insert_with(|| Slot {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            if slot.m.len() != n {
                return Err(OptimError::StateMismatch {
                    index,
                    state: slot.m.len(),
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
                let g = grad[i] + wd * theta[i];
                slot.m[i] = b1 * slot.m[i] + (1.0 - b1) * g;
                slot.v[i] = b2 * slot.v[i] + (1.0 - b2) * g * g;
                let m_hat = slot.m[i] / bc1;
                let v_hat = slot.v[i] / bc2;
                theta[i] -= self.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
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
