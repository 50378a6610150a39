//! Benchmark objectives over lists of parameter matrices.
//!
//! Problems are immutable after construction. Stochastic gradients draw from
//! an RNG passed in by the caller, so the same problem can be evaluated from
//! several threads with distinct streams.

mod logistic;
mod mlp;
mod quadratic;
mod rosenbrock;

pub use logistic::{LogisticConfig, LogisticProblem};
pub use mlp::{MlpConfig, MlpProblem};
pub use quadratic::{Hessian, QuadraticProblem};
pub use rosenbrock::RosenbrockProblem;

use std::io;

use thiserror::Error;

use crate::linalg::{LinalgError, Matrix};
use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("invalid problem definition: {0}")]
    Invalid(String),
    #[error("Hessian is not symmetric positive definite (smallest eigenvalue {0:e})")]
    NotPositiveDefinite(f64),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// A differentiable objective with a stochastic gradient oracle.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;

    /// Shapes of the parameter matrices, in order.
    fn param_shapes(&self) -> Vec<(usize, usize)>;

    fn loss(&self, params: &[Matrix]) -> f64;

    /// Exact gradient of [`loss`](Problem::loss).
    fn gradient(&self, params: &[Matrix]) -> Vec<Matrix>;

    /// Unbiased estimate of the gradient.
    fn stochastic_gradient(&self, params: &[Matrix], rng: &mut Rng) -> Vec<Matrix>;

    /// Starting point drawn from `rng`.
    fn initial_params(&self, rng: &mut Rng) -> Vec<Matrix>;

    /// Minimum value `f*`, when known.
    fn optimum(&self) -> Option<f64> {
        None
    }

    /// Gradient Lipschitz constant `L`, when known.
    fn smoothness(&self) -> Option<f64> {
        None
    }

    /// Polyak-Łojasiewicz constant `μ`, when known.
    fn pl_constant(&self) -> Option<f64> {
        None
    }

    /// Declared variance `E‖g − ∇f‖²` of the stochastic gradient, when known.
    fn noise_variance(&self) -> Option<f64> {
        None
    }

    /// Writes the problem's synthetic data as CSV.
    fn dump_data(&self, out: &mut dyn io::Write) -> io::Result<()>;
}

/// Largest relative error between the analytic gradient and central
/// differences with step `h`, over every coordinate of every layer.
///
/// The relative error of a coordinate is `|fd − g| / max(|g|, 1e-8)`.
pub fn finite_diff_check(problem: &dyn Problem, params: &[Matrix], h: f64) -> f64 {
    assert!(h > 0.0, "finite difference step must be positive");
    let analytic = problem.gradient(params);
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for (layer, grad) in analytic.iter().enumerate() {
        for k in 0..grad.as_slice().len() {
            let orig = probe[layer].as_slice()[k];
            probe[layer].as_mut_slice()[k] = orig + h;
            let up = problem.loss(&probe);
            probe[layer].as_mut_slice()[k] = orig - h;
            let down = problem.loss(&probe);
            probe[layer].as_mut_slice()[k] = orig;
            let fd = (up - down) / (2.0 * h);
            let g = grad.as_slice()[k];
            worst = worst.max((fd - g).abs() / g.abs().max(1e-8));
        }
    }
    worst
}

/// Total number of scalar parameters.
pub fn param_count(shapes: &[(usize, usize)]) -> usize {
    shapes.iter().map(|(n, m)| n * m).sum()
}

pub(crate) fn flatten(params: &[Matrix]) -> Vec<f64> {
    params
        .iter()
        .flat_map(|p| p.as_slice().iter().copied())
        .collect()
}

pub(crate) fn unflatten(values: &[f64], shapes: &[(usize, usize)]) -> Vec<Matrix> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|&(n, m)| {
            let block = values[offset..offset + n * m].to_vec();
            offset += n * m;
            Matrix::from_vec(n, m, block).expect("shape matches slice length")
        })
        .collect()
}

pub(crate) fn check_shapes(shapes: &[(usize, usize)]) -> Result<(), ProblemError> {
    if shapes.is_empty() || shapes.iter().any(|&(n, m)| n == 0 || m == 0) {
        return Err(ProblemError::Invalid(
            "need at least one layer with positive dimensions".into(),
        ));
    }
    Ok(())
}
