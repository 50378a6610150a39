use crate::linalg::{orthogonal_complete, symmetric_eigen, Matrix, OrthonormalBasis};

use super::TheoryError;

/// Largest vector dimension the Γ monitor accepts; it builds dense `d × d`
/// matrices and eigen-decomposes one per step.
pub const GAMMA_MAX_DIM: usize = 128;

/// What the Γ monitor needs from one analytical-mode step of a vector layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GammaSnapshot {
    /// Projection `P_t` (`d × r`).
    pub basis: OrthonormalBasis,
    /// Preconditioner entries `max(v_t, vhat_max_{t−1})` (length `r`).
    pub vhat: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GammaReport {
    pub steps: usize,
    /// `Σ ‖Γ_{t−1} − Γ_t‖` (operator norm).
    pub sum_norm: f64,
    /// `Σ ‖Γ_{t−1} − Γ_t‖²`.
    pub sum_norm_sq: f64,
    /// Smallest eigenvalue of any `Γ_{t−1} − Γ_t`.
    pub min_eigenvalue: f64,
    pub bound_norm: f64,
    pub bound_norm_sq: f64,
}

impl GammaReport {
    pub fn passed(&self) -> bool {
        self.min_eigenvalue >= -1e-9
            && self.sum_norm <= self.bound_norm
            && self.sum_norm_sq <= self.bound_norm_sq
    }

    pub fn verdict(&self) -> String {
        format!(
            "gamma_delta: {} (sum {:.6e} <= {:.6e}, sum sq {:.6e} <= {:.6e}, min eig {:.3e})",
            if self.passed() { "pass" } else { "FAIL" },
            self.sum_norm,
            self.bound_norm,
            self.sum_norm_sq,
            self.bound_norm_sq,
            self.min_eigenvalue
        )
    }
}

/// `Γ_t = Q_t Diag^{-1/2}(v̂_t + ε, min v̂_t + ε) Q_tᵀ`, where `Q_t` completes
/// `P_t` to an orthogonal matrix and the trailing `d − r` diagonal entries
/// use the smallest preconditioner entry.
fn gamma(s: &GammaSnapshot, epsilon: f64) -> Matrix {
    let d = s.basis.dim();
    let q = orthogonal_complete(&s.basis);
    let floor = s.vhat.iter().copied().fold(f64::INFINITY, f64::min);
    let diag: Vec<f64> = (0..d)
        .map(|i| {
            let v = if i < s.vhat.len() { s.vhat[i] } else { floor };
            1.0 / (v + epsilon).sqrt()
        })
        .collect();
    q.matmul(&Matrix::diag(&diag)).matmul_t(&q)
}

/// Telescoping sums of the preconditioner changes `ΔΓ_t = Γ_{t−1} − Γ_t`,
/// starting from `Γ₀ = ε^{-1/2} I`, checked against `2/√ε` and `2/ε`.
pub fn gamma_delta_monitor(
    snapshots: &[GammaSnapshot],
    epsilon: f64,
) -> Result<GammaReport, TheoryError> {
    let mut report = GammaReport {
        steps: snapshots.len(),
        sum_norm: 0.0,
        sum_norm_sq: 0.0,
        min_eigenvalue: 0.0,
        bound_norm: 2.0 / epsilon.sqrt(),
        bound_norm_sq: 2.0 / epsilon,
    };
    let Some(first) = snapshots.first() else {
        return Ok(report);
    };
    let d = first.basis.dim();
    if d > GAMMA_MAX_DIM {
        return Err(TheoryError::DimensionTooLarge {
            dim: d,
            max: GAMMA_MAX_DIM,
        });
    }
    let mut prev = Matrix::identity(d).scale(1.0 / epsilon.sqrt());
    for s in snapshots {
        if s.basis.dim() != d || s.vhat.len() != s.basis.rank() {
            return Err(TheoryError::BadSnapshot(format!(
                "basis {:?} with {} preconditioner entries",
                s.basis.matrix().shape(),
                s.vhat.len()
            )));
        }
        let next = gamma(s, epsilon);
        let delta = prev.sub(&next);
        let eig = symmetric_eigen(&delta).expect("finite symmetric input");
        let hi = eig.values[0];
        let lo = eig.values[d - 1];
        let norm = hi.abs().max(lo.abs());
        report.sum_norm += norm;
        report.sum_norm_sq += norm * norm;
        report.min_eigenvalue = report.min_eigenvalue.min(lo);
        prev = next;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snapshot(d: usize, vhat: Vec<f64>) -> GammaSnapshot {
        GammaSnapshot {
            basis: OrthonormalBasis::leading_coordinates(d, vhat.len()),
            vhat,
        }
    }

    #[test]
    fn single_step_from_zero() {
        let eps = 1e-8;
        let r = gamma_delta_monitor(&[snapshot(4, vec![0.5, 0.7])], eps).unwrap();
        // the largest eigenvalue of ε^{-1/2} I − Γ₁ sits at the largest entry
        let expected = 1.0 / eps.sqrt() - 1.0 / (0.7 + eps).sqrt();
        assert!(
            (r.sum_norm - expected).abs() < 1e-9 * expected,
            "{} vs {expected}",
            r.sum_norm
        );
        assert!(r.passed());
    }

    #[test]
    fn unchanged_preconditioner_adds_nothing() {
        let s = snapshot(3, vec![0.2, 0.2]);
        let one = gamma_delta_monitor(std::slice::from_ref(&s), 1e-8).unwrap();
        let two = gamma_delta_monitor(&[s.clone(), s], 1e-8).unwrap();
        assert!((two.sum_norm - one.sum_norm).abs() < 1e-9);
    }

    #[test]
    fn growing_preconditioner_is_psd_decreasing() {
        let steps: Vec<GammaSnapshot> = (1..=20)
            .map(|k| snapshot(5, vec![k as f64, k as f64 + 0.5]))
            .collect();
        let r = gamma_delta_monitor(&steps, 1e-8).unwrap();
        assert!(r.passed(), "{}", r.verdict());
    }

    #[test]
    fn shrinking_preconditioner_is_flagged() {
        let steps = vec![snapshot(3, vec![4.0]), snapshot(3, vec![1.0])];
        let r = gamma_delta_monitor(&steps, 1e-8).unwrap();
        assert!(r.min_eigenvalue < -0.1);
        assert!(!r.passed());
    }

    #[test]
    fn large_dimension_is_refused() {
        let s = snapshot(GAMMA_MAX_DIM + 1, vec![1.0]);
        assert!(matches!(
            gamma_delta_monitor(&[s], 1e-8),
            Err(TheoryError::DimensionTooLarge { .. })
        ));
    }
}
