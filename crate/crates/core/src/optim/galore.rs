use crate::linalg::{truncated_svd, Matrix, OrthonormalBasis};

use super::{adam_direction, debias, update_moments, AdamConfig, OptimError, Side, StepStats};

/// GaLore: Adam on `Pᵀg` with `P` refreshed by SVD every `frequency` steps.
///
/// Moments are not transported when the projection changes. Refreshes happen
/// on steps `1, 𝒯 + 1, 2𝒯 + 1, …`, i.e. whenever the 0-based step counter is a
/// multiple of `𝒯`.
#[derive(Clone, Debug)]
pub struct GaLoreState {
    pub t: u64,
    pub basis: Option<OrthonormalBasis>,
    pub m: Matrix,
    pub v: Matrix,
    pub frequency: u64,
    pub alpha: f64,
    pub rank: usize,
    pub side: Side,
    pub shape: (usize, usize),
    pub config: AdamConfig,
}

impl GaLoreState {
    pub fn new(
        shape: (usize, usize),
        config: AdamConfig,
        rank: usize,
        frequency: u64,
    ) -> Result<Self, OptimError> {
        config.validate()?;
        if frequency == 0 {
            return Err(OptimError::InvalidConfig(
                "subspace frequency must be at least 1".into(),
            ));
        }
        let (n, m) = shape;
        let side = Side::for_shape(n, m);
        let (rows, cols) = match side {
            Side::Left => (n, m),
            Side::Right => (m, n),
        };
        if rank == 0 || rank > rows {
            return Err(OptimError::RankTooLarge {
                rank,
                rows: n,
                cols: m,
            });
        }
        Ok(Self {
            t: 0,
            basis: None,
            m: Matrix::zeros(rank, cols),
            v: Matrix::zeros(rank, cols),
            frequency,
            alpha: 1.0,
            rank,
            side,
            shape,
            config,
        })
    }

    /// Whether step `t` (1-based) recomputes the projection.
    pub fn refreshes_at(&self, t: u64) -> bool {
        (t - 1).is_multiple_of(self.frequency)
    }

    pub fn step(
        &mut self,
        params: &mut Matrix,
        grad: &Matrix,
        lr: f64,
    ) -> Result<StepStats, OptimError> {
        for x in [&*params, grad] {
            if x.shape() != self.shape {
                return Err(OptimError::ShapeMismatch {
                    expected: self.shape,
                    got: x.shape(),
                });
            }
        }
        let t = self.t + 1;
        if !grad.is_finite() {
            return Err(OptimError::NonFinite {
                layer: 0,
                step: t,
                what: "gradient",
            });
        }
        let g = match self.side {
            Side::Left => grad.clone(),
            Side::Right => grad.transpose(),
        };
        if self.refreshes_at(t) || self.basis.is_none() {
            let fresh = if g.max_abs() == 0.0 {
                self.basis
                    .clone()
                    .unwrap_or_else(|| OrthonormalBasis::leading_coordinates(g.rows(), self.rank))
            } else {
                truncated_svd(&g, self.rank)?
            };
            self.basis = Some(fresh);
        }
        let p = self.basis.as_ref().expect("basis set above");
        let a = p.matrix().t_matmul(&g);
        update_moments(
            &mut self.m,
            &mut self.v,
            &a,
            self.config.beta1,
            self.config.beta2,
        );
        let dir = adam_direction(&self.m, &self.v, t, &self.config);
        let delta = p.matrix().matmul(&dir);
        let step = self.alpha * lr;
        match self.side {
            Side::Left => params.axpy(-step, &delta),
            Side::Right => params.axpy(-step, &delta.transpose()),
        }
        self.t = t;
        let captured = p.matrix().matmul(&a);
        let g_norm = g.frobenius_norm();
        Ok(StepStats {
            step: t,
            q: if g_norm == 0.0 {
                0.0
            } else {
                g.sub(&captured).frobenius_norm() / g_norm
            },
            fit_norm: g_norm,
            error_norm: 0.0,
            vhat_max: self.v.max() / debias(self.config.beta2, t),
            min_second_moment: self.v.min(),
            orthonormality_error: p.orthonormality_error(),
        })
    }
}
