//! LDAdam and its baselines.
//!
//! Every optimizer keeps one independent state per parameter matrix. States
//! hold no shared data and no locks: step different layers on different
//! threads freely, but never touch one state from two threads at once.

mod adam;
mod checkpoint;
mod config;
mod galore;
mod ldadam;
mod schedule;

pub use adam::{AdamState, AmsGradState, AmsGradVariant};
pub use config::{AdamConfig, FixedBasis, Mode, Negativity, OptimizerConfig, ProjectionProvider};
pub use galore::GaLoreState;
pub use ldadam::{
    intermediate_first_moment, intermediate_second_moment, transition, LdAdamState, Side,
};
pub use schedule::{Decay, Schedule};

use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("rank {rank} exceeds the projected dimension of a {rows}x{cols} layer")]
    RankTooLarge {
        rank: usize,
        rows: usize,
        cols: usize,
    },
    #[error("expected a {expected:?} matrix, got {got:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("layer {layer}, step {step}: non-finite {what}")]
    NonFinite {
        layer: usize,
        step: u64,
        what: &'static str,
    },
    #[error("layer {layer}, step {step}: step called before any gradient was accumulated")]
    NothingAccumulated { layer: usize, step: u64 },
    #[error("step {step} outside the schedule range 1..={total}")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Per-layer diagnostics of one optimizer step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub step: u64,
    /// Fraction of the fit target missed by the new projection (0 for
    /// full-space optimizers).
    pub q: f64,
    /// Frobenius norm of the matrix the projection was fitted to. For
    /// full-space optimizers, the norm of the gradient.
    pub fit_norm: f64,
    /// Norm of the error buffer left in the accumulator for the next step.
    pub error_norm: f64,
    /// Largest second-moment entry used as a preconditioner, see
    /// [`LdAdamState::vhat_max`].
    pub vhat_max: f64,
    /// Smallest entry of the stored second moment.
    pub min_second_moment: f64,
    /// `max |PᵀP − I|` of the projection after the step (0 without one).
    pub orthonormality_error: f64,
}

/// Any of the implemented optimizers, behind one accumulate/step interface.
///
/// The full-space baselines get their own accumulation buffer here; LDAdam
/// accumulates into its error-carrying buffer.
#[derive(Clone, Debug)]
pub enum LayerOptimizer {
    LdAdam(LdAdamState),
    Adam(AdamState, Matrix),
    AmsGrad(AmsGradState, Matrix),
    GaLore(GaLoreState, Matrix),
}

impl LayerOptimizer {
    pub fn ldadam(
        shape: (usize, usize),
        config: OptimizerConfig,
        layer: usize,
    ) -> Result<Self, OptimError> {
        Ok(Self::LdAdam(LdAdamState::new(shape, config, layer)?))
    }

    pub fn adam(shape: (usize, usize), config: AdamConfig) -> Result<Self, OptimError> {
        Ok(Self::Adam(
            AdamState::new(shape, config)?,
            Matrix::zeros(shape.0, shape.1),
        ))
    }

    pub fn amsgrad(
        shape: (usize, usize),
        config: AdamConfig,
        variant: AmsGradVariant,
    ) -> Result<Self, OptimError> {
        Ok(Self::AmsGrad(
            AmsGradState::new(shape, config, variant)?,
            Matrix::zeros(shape.0, shape.1),
        ))
    }

    pub fn galore(
        shape: (usize, usize),
        config: AdamConfig,
        rank: usize,
        frequency: u64,
    ) -> Result<Self, OptimError> {
        Ok(Self::GaLore(
            GaLoreState::new(shape, config, rank, frequency)?,
            Matrix::zeros(shape.0, shape.1),
        ))
    }

    pub fn accumulate(&mut self, grad: &Matrix) -> Result<(), OptimError> {
        match self {
            Self::LdAdam(s) => s.accumulate(grad),
            Self::Adam(_, buf) | Self::AmsGrad(_, buf) | Self::GaLore(_, buf) => {
                if grad.shape() != buf.shape() {
                    return Err(OptimError::ShapeMismatch {
                        expected: buf.shape(),
                        got: grad.shape(),
                    });
                }
                buf.axpy(1.0, grad);
                Ok(())
            }
        }
    }

    pub fn step(&mut self, params: &mut Matrix, lr: f64) -> Result<StepStats, OptimError> {
        let stats = match self {
            Self::LdAdam(s) => return s.step(params, lr),
            Self::Adam(s, buf) => s.step(params, buf, lr)?,
            Self::AmsGrad(s, buf) => s.step(params, buf, lr)?,
            Self::GaLore(s, buf) => s.step(params, buf, lr)?,
        };
        if let Self::Adam(_, buf) | Self::AmsGrad(_, buf) | Self::GaLore(_, buf) = self {
            buf.fill(0.0);
        }
        Ok(stats)
    }

    pub fn as_ldadam(&self) -> Option<&LdAdamState> {
        match self {
            Self::LdAdam(s) => Some(s),
            _ => None,
        }
    }
}

/// Shared Adam moment update on a (possibly projected) gradient `a`.
pub(crate) fn update_moments(m: &mut Matrix, v: &mut Matrix, a: &Matrix, beta1: f64, beta2: f64) {
    let (ms, vs, av) = (m.as_mut_slice(), v.as_mut_slice(), a.as_slice());
    for ((mi, vi), ai) in ms.iter_mut().zip(vs.iter_mut()).zip(av) {
        *mi = beta1 * *mi + (1.0 - beta1) * ai;
        *vi = beta2 * *vi + (1.0 - beta2) * ai * ai;
    }
}

/// `m̂ / (√v̂ + ε)` with the usual bias corrections at step `t`.
pub(crate) fn adam_direction(m: &Matrix, v: &Matrix, t: u64, config: &AdamConfig) -> Matrix {
    let c1 = debias(config.beta1, t);
    let c2 = debias(config.beta2, t);
    m.zip_map(v, |mi, vi| (mi / c1) / ((vi / c2).sqrt() + config.epsilon))
}

/// `1 − βᵗ`.
pub(crate) fn debias(beta: f64, t: u64) -> f64 {
    1.0 - beta.powi(t as i32)
}
