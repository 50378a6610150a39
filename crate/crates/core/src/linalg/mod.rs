//! Dense `f64` kernels used by the optimizers and the monitors.
//!
//! Everything here is a pure function of its inputs, so the kernels are safe
//! to call concurrently from any number of threads.

mod eigen;
mod matrix;
mod ortho;
mod power;

pub use eigen::{symmetric_eigen, truncated_svd, SymmetricEigen};
pub use matrix::Matrix;
pub use ortho::{gram_schmidt, orthogonal_complete, GramSchmidt};
pub use power::{block_power_iteration_step, residual_ratio};

pub(crate) use matrix::dot;

use thiserror::Error;

/// Maximum entrywise deviation of `PᵀP` from the identity tolerated for an
/// [`OrthonormalBasis`].
pub const ORTHONORMALITY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix shape must be at least 1x1")]
    EmptyShape,
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: input contains non-finite entries")]
    NonFinite { op: &'static str },
    #[error("{op}: matrix has zero Frobenius norm")]
    ZeroMatrix { op: &'static str },
    #[error("rank {rank} out of range for a {rows}x{cols} matrix")]
    RankOutOfRange {
        rank: usize,
        rows: usize,
        cols: usize,
    },
    #[error("columns are not orthonormal (max |PᵀP - I| = {error:e})")]
    NotOrthonormal { error: f64 },
}

/// An `n × r` matrix with orthonormal columns (`r ≤ n`).
#[derive(Clone, Debug, PartialEq)]
pub struct OrthonormalBasis(Matrix);

impl OrthonormalBasis {
    /// Validates orthonormality to [`ORTHONORMALITY_TOL`].
    pub fn new(matrix: Matrix) -> Result<Self, LinalgError> {
        if matrix.cols() > matrix.rows() {
            return Err(LinalgError::RankOutOfRange {
                rank: matrix.cols(),
                rows: matrix.rows(),
                cols: matrix.rows(),
            });
        }
        if !matrix.is_finite() {
            return Err(LinalgError::NonFinite {
                op: "OrthonormalBasis::new",
            });
        }
        let error = orthonormality_error(&matrix);
        if error > ORTHONORMALITY_TOL {
            return Err(LinalgError::NotOrthonormal { error });
        }
        Ok(Self(matrix))
    }

    pub(crate) fn from_matrix_unchecked(matrix: Matrix) -> Self {
        debug_assert!(orthonormality_error(&matrix) <= 1e-8);
        Self(matrix)
    }

    /// `[I_r; 0]`, the first `r` canonical coordinates of `ℝⁿ`.
    pub fn leading_coordinates(n: usize, r: usize) -> Self {
        assert!(r >= 1 && r <= n, "need 1 <= r <= n");
        Self(Matrix::eye(n, r))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// Ambient dimension `n`.
    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn rank(&self) -> usize {
        self.0.cols()
    }

    /// `max |PᵀP − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.0)
    }

    /// Flips the sign of column `j`.
    pub fn negate_column(&mut self, j: usize) {
        for i in 0..self.0.rows() {
            self.0[(i, j)] = -self.0[(i, j)];
        }
    }
}

pub fn orthonormality_error(p: &Matrix) -> f64 {
    let gram = p.t_matmul(p);
    gram.max_abs_diff(&Matrix::identity(p.cols()))
}
