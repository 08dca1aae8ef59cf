//! Learning-rate schedules.
//!
//! The 1cycle policy warms up with a cosine ramp from max_lr/div_factor to
//! max_lr over the first pct_start of the budget, then anneals with a cosine
//! to max_lr/final_div. The peak step is rounded to an integer so the peak
//! and boundary values are exact.

use super::{OptimError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    OneCycle,
    Polynomial,
    Constant,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub max_lr: f64,
    pub total_steps: u64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div: f64,
    pub power: f64,
}

impl Schedule {
    pub fn one_cycle(max_lr: f64, total_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::OneCycle,
            max_lr,
            total_steps,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div: 1e4,
            power: 1.0,
        }
    }

    pub fn polynomial(max_lr: f64, total_steps: u64, power: f64) -> Self {
        Self {
            kind: ScheduleKind::Polynomial,
            max_lr,
            total_steps,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div: 1e4,
            power,
        }
    }

    pub fn constant(max_lr: f64, total_steps: u64) -> Self {
        Self {
            kind: ScheduleKind::Constant,
            max_lr,
            total_steps,
            pct_start: 0.3,
            div_factor: 25.0,
            final_div: 1e4,
            power: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr > 0.0) {
            return Err(OptimError::InvalidConfig("max_lr must be positive".into()));
        }
        if self.total_steps == 0 {
            return Err(OptimError::InvalidConfig("total_steps must be >= 1".into()));
        }
        if !(self.pct_start > 0.0 && self.pct_start < 1.0) {
            return Err(OptimError::InvalidConfig("pct_start must lie in (0, 1)".into()));
        }
        if !(self.div_factor > 0.0) || !(self.final_div > 0.0) {
            return Err(OptimError::InvalidConfig("divisors must be positive".into()));
        }
        if self.kind == ScheduleKind::Polynomial && !(self.power > 0.0) {
            return Err(OptimError::InvalidConfig("power must be positive".into()));
        }
        Ok(())
    }

    /// Warmup peak as an integer step index in [1, total_steps - 1].
    pub fn peak_step(&self) -> u64 {
        let raw = (self.pct_start * self.total_steps as f64).round() as u64;
        raw.clamp(1, (self.total_steps - 1).max(1))
    }

    /// Learning rate at step `t` (0 <= t <= total_steps).
    pub fn lr_at(&self, t: u64) -> Result<f64> {
        if t > self.total_steps {
            return Err(OptimError::StepOutOfRange {
                t,
                total: self.total_steps,
            });
        }
        Ok(match self.kind {
            ScheduleKind::Constant => self.max_lr,
            ScheduleKind::Polynomial => {
                let frac = 1.0 - t as f64 / self.total_steps as f64;
                self.max_lr * frac.powf(self.power)
            }
            ScheduleKind::OneCycle => {
                let peak = self.peak_step();
                if t <= peak {
                    let start = self.max_lr / self.div_factor;
                    let s = t as f64 / peak as f64;
                    let w = 0.5 * (1.0 + (std::f64::consts::PI * s).cos());
                    w * start + (1.0 - w) * self.max_lr
                } else {
                    let end = self.max_lr / self.final_div;
                    let s = (t - peak) as f64 / (self.total_steps - peak) as f64;
                    let w = 0.5 * (1.0 + (std::f64::consts::PI * s).cos());
                    w * self.max_lr + (1.0 - w) * end
                }
            }
        })
    }
}
