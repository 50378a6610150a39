use crate::linalg::OrthonormalBasis;

use super::OptimError;

/// Which of the two update rules LDAdam follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    /// Bias-corrected moments, `ε` added outside the square root, fit target
    /// interpolated with factor `ρ`.
    #[default]
    Practical,
    /// Raw moments, uniform AMSGrad floor, `ε` inside the square root,
    /// debiasing folded into the step size, fit target interpolated with `β₁`.
    Analytical,
}

/// How a transported second moment that came out negative is made valid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Negativity {
    #[default]
    Abs,
    ClipZero,
}

/// A projection basis that never changes.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum FixedBasis {
    /// `[I_r; 0]` in the oriented layer coordinates.
    #[default]
    LeadingCoordinates,
    /// An explicit `n' × r` basis in oriented coordinates.
    Given(OrthonormalBasis),
}

#[derive(Clone, Debug, PartialEq, Default)]
pub enum ProjectionProvider {
    /// One warm-started block power iteration per step.
    #[default]
    PowerIteration,
    /// Exact truncated SVD of the fit target every step.
    Svd,
    Fixed(FixedBasis),
}

/// Hyperparameters of one LDAdam layer state.
///
/// The learning-rate schedule is kept outside and passed to each step, so one
/// config can be shared by layers driven by the same schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub rank: usize,
    pub rho: f64,
    pub mode: Mode,
    pub error_feedback: bool,
    pub projection_provider: ProjectionProvider,
    pub negativity: Negativity,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            beta1: 0.908,
            beta2: 0.99,
            epsilon: 1e-8,
            rank: 1,
            rho: 0.908,
            mode: Mode::Practical,
            error_feedback: true,
            projection_provider: ProjectionProvider::PowerIteration,
            negativity: Negativity::Abs,
        }
    }
}

impl OptimizerConfig {
    pub fn with_rank(rank: usize) -> Self {
        Self {
            rank,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        check_beta("beta1", self.beta1)?;
        check_beta("beta2", self.beta2)?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(OptimError::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.rank == 0 {
            return Err(OptimError::InvalidConfig("rank must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(OptimError::InvalidConfig(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if let ProjectionProvider::Fixed(FixedBasis::Given(p)) = &self.projection_provider {
            if p.rank() != self.rank {
                return Err(OptimError::InvalidConfig(format!(
                    "fixed basis has {} columns but rank is {}",
                    p.rank(),
                    self.rank
                )));
            }
        }
        Ok(())
    }
}

/// Hyperparameters shared by the full-space baselines and GaLore.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        check_beta("beta1", self.beta1)?;
        check_beta("beta2", self.beta2)?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(OptimError::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

fn check_beta(name: &str, value: f64) -> Result<(), OptimError> {
    if (0.0..1.0).contains(&value) {
        Ok(())
    } else {
        Err(OptimError::InvalidConfig(format!(
            "{name} must lie in [0, 1), got {value}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = OptimizerConfig::default();
        assert_eq!(
            (c.beta1, c.beta2, c.rho, c.epsilon),
            (0.908, 0.99, 0.908, 1e-8)
        );
        assert!(c.error_feedback);
        assert_eq!(c.projection_provider, ProjectionProvider::PowerIteration);
        assert_eq!(c.mode, Mode::Practical);
    }

    #[test]
    fn default_betas_nearly_satisfy_the_consistency_constraint() {
        // β₂ = (1 − β₂)(β₁/(1 − β₁))² is solved by β₁ = √99/(1 + √99) at β₂ = 0.99
        let exact = 99f64.sqrt() / (1.0 + 99f64.sqrt());
        assert!((exact - 0.908).abs() < 1e-3);
    }

    #[test]
    fn rejects_out_of_range_values() {
        for bad in [
            OptimizerConfig {
                beta1: 1.0,
                ..Default::default()
            },
            OptimizerConfig {
                beta2: -0.1,
                ..Default::default()
            },
            OptimizerConfig {
                epsilon: 0.0,
                ..Default::default()
            },
            OptimizerConfig {
                rank: 0,
                ..Default::default()
            },
            OptimizerConfig {
                rho: 1.5,
                ..Default::default()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
