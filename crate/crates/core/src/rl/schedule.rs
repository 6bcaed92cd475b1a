use std::f64::consts::PI;

use crate::error::{CdprError, Result};

/// Linear warmup to `lr_max`, then cosine decay to `lr_min` at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lr_min && self.lr_min <= self.lr_max) {
            return Err(CdprError::config("algorithm.lr_min", "need 0 <= lr_min <= lr_max"));
        }
        if self.warmup_steps >= self.total_steps {
            return Err(CdprError::config(
                "algorithm.warmup_fraction",
                "warmup must end before the budget",
            ));
        }
        Ok(())
    }
}

pub fn cosine_warmup_lr(s: &LrSchedule, t: usize) -> f64 {
    let t = t.min(s.total_steps);
    if t < s.warmup_steps {
        return s.lr_max * t as f64 / s.warmup_steps as f64;
    }
    let progress = (t - s.warmup_steps) as f64 / (s.total_steps - s.warmup_steps) as f64;
    s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + (PI * progress).cos())
}
