use std::f64::consts::PI;

use super::OptimError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decay {
    LinearToZero,
    /// Half-cosine from `base_lr` down to `fraction · base_lr`.
    CosineToFraction(f64),
    Constant,
}

/// Linear warmup from 0 followed by a decay phase.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub decay: Decay,
    pub total_steps: u64,
}

impl Schedule {
    pub fn constant(base_lr: f64, total_steps: u64) -> Self {
        Self {
            base_lr,
            warmup_steps: 0,
            decay: Decay::Constant,
            total_steps,
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if !(self.base_lr >= 0.0 && self.base_lr.is_finite()) {
            return Err(OptimError::InvalidConfig(format!(
                "base_lr must be finite and non-negative, got {}",
                self.base_lr
            )));
        }
        if self.total_steps == 0 || self.warmup_steps > self.total_steps {
            return Err(OptimError::InvalidConfig(format!(
                "need 0 <= warmup_steps ({}) <= total_steps ({}) and total_steps >= 1",
                self.warmup_steps, self.total_steps
            )));
        }
        if let Decay::CosineToFraction(f) = self.decay {
            if !(0.0..=1.0).contains(&f) {
                return Err(OptimError::InvalidConfig(format!(
                    "cosine fraction must lie in [0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }

    /// Learning rate at step `t` (1-based).
    pub fn lr(&self, t: u64) -> Result<f64, OptimError> {
        if t == 0 || t > self.total_steps {
            return Err(OptimError::StepOutOfRange {
                step: t,
                total: self.total_steps,
            });
        }
        let base = self.base_lr;
        if t <= self.warmup_steps {
            return Ok(base * t as f64 / self.warmup_steps as f64);
        }
        let span = self.total_steps - self.warmup_steps;
        let progress = if span == 0 {
            1.0
        } else {
            (t - self.warmup_steps) as f64 / span as f64
        };
        Ok(match self.decay {
            Decay::Constant => base,
            Decay::LinearToZero => base * (1.0 - progress),
            Decay::CosineToFraction(f) => {
                base * (f + (1.0 - f) * 0.5 * (1.0 + (PI * progress).cos()))
            }
        })
    }
}
