//! Optimizers (Adam, Lion) and learning-rate schedules (1cycle, polynomial
//! decay, constant).
//!
//! Optimizers consume the gradient buffers accumulated on [`Tensor`]s by the
//! backward pass; a step is rejected before any parameter is touched if a
//! tracked gradient is non-finite.

mod adam;
mod lion;
mod schedule;

pub use adam::{Adam, AdamConfig};
pub use lion::{Lion, LionConfig};
pub use schedule::{Schedule, ScheduleKind};

use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Result<T> = std::result::Result<T, OptimError>;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("non-finite gradient for parameter #{index}; step rejected")]
    NonFiniteGradient { index: usize },
    #[error("parameter #{index} does not match optimizer state ({state} vs {got} elements)")]
    StateMismatch { index: usize, state: usize, got: usize },
    #[error("step index {t} outside schedule range 0..={total}")]
    StepOutOfRange { t: u64, total: u64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub trait Optimizer {
    /// Applies one update from each tracked parameter's accumulated gradient.
    fn step(&mut self, params: &mut [Tensor]) -> Result<()>;
    fn set_lr(&mut self, lr: f64);
    fn lr(&self) -> f64;
}

/// Serializable choice of optimizer plus hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam(AdamConfig),
    Lion(LionConfig),
}

impl OptimizerKind {
    pub fn build(&self) -> Result<Box<dyn Optimizer>> {
        Ok(match self {
            OptimizerKind::Adam(cfg) => Box::new(Adam::new(cfg.clone())?),
            OptimizerKind::Lion(cfg) => Box::new(Lion::new(cfg.clone())?),
        })
    }

    pub fn base_lr(&self) -> f64 {
        match self {
            OptimizerKind::Adam(cfg) => cfg.lr,
            OptimizerKind::Lion(cfg) => cfg.lr,
        }
    }
}

/// Rejects a step if any tracked gradient is non-finite, before mutation.
pub(crate) fn validate_gradients(params: &[Tensor]) -> Result<()> {
    for (index, p) in params.iter().enumerate() {
        if !p.requires_grad() {
            continue;
        }
        if let Some(g) = p.grad() {
            if !g.iter().all(|x| x.is_finite()) {
                return Err(OptimError::NonFiniteGradient { index });
            }
        }
    }
    Ok(())
}
