use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-cycle learning-rate schedule with cosine warmup and cosine decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Peak learning rate per parameter group.
    pub max_lr: BTreeMap<String, f64>,
    pub total_steps: u64,
    pub warmup_fraction: f64,
    pub initial_divisor: f64,
    pub final_divisor: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        let mut max_lr = BTreeMap::new();
        max_lr.insert("core".to_string(), 1e-3);
        max_lr.insert("enc2d".to_string(), 1e-3);
        Self {
            max_lr,
            total_steps: 1000,
            warmup_fraction: 0.3,
            initial_divisor: 25.0,
            final_divisor: 1e4,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return Err(Error::Config("warmup_fraction must lie in (0, 1)".into()));
        }
        if self.initial_divisor < 1.0 || self.final_divisor < 1.0 {
            return Err(Error::Config("schedule divisors must be >= 1".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if self.max_lr.values().any(|lr| !(*lr > 0.0)) {
            return Err(Error::Config("max_lr values must be positive".into()));
        }
        Ok(())
    }

    /// Peak rate for a parameter group; unknown groups use the `core` rate.
    pub fn group_max_lr(&self, group: &str) -> f64 {
        self.max_lr
            .get(group)
            .or_else(|| self.max_lr.get("core"))
            .copied()
            .unwrap_or(1e-3)
    }
}

fn cosine_interp(start: f64, end: f64, progress: f64) -> f64 {
    end + (start - end) * 0.5 * (1.0 + (PI * progress).cos())
}

/// Learning rate at `step` for a peak of `max_lr`. Steps past the end clamp
/// to the final value.
pub fn onecycle_lr(step: u64, max_lr: f64, cfg: &ScheduleConfig) -> f64 {
    let total = cfg.total_steps as f64;
    let step = (step as f64).min(total);
    let warm = cfg.warmup_fraction * total;
    if step <= warm {
        let progress = if warm > 0.0 { step / warm } else { 1.0 };
        cosine_interp(max_lr / cfg.initial_divisor, max_lr, progress)
    } else {
        let progress = (step - warm) / (total - warm);
        cosine_interp(max_lr, max_lr / cfg.final_divisor, progress)
    }
}
