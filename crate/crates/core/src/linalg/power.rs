use super::{gram_schmidt, LinalgError, Matrix, OrthonormalBasis};

/// One warm-started block power iteration: `gram_schmidt(B · (Bᵀ · P_prev))`.
///
/// The `m × r` product `Bᵀ P_prev` is formed first, so no `n × n` or `m × m`
/// intermediate is ever allocated. A zero `B` leaves the subspace unchanged.
pub fn block_power_iteration_step(
    b: &Matrix,
    prev: &OrthonormalBasis,
) -> Result<OrthonormalBasis, LinalgError> {
    if b.rows() != prev.dim() {
        return Err(LinalgError::ShapeMismatch {
            op: "block_power_iteration_step",
            left: b.shape(),
            right: prev.matrix().shape(),
        });
    }
    if !b.is_finite() {
        return Err(LinalgError::NonFinite {
            op: "block_power_iteration_step",
        });
    }
    if b.max_abs() == 0.0 {
        return Ok(prev.clone());
    }
    let coeffs = b.t_matmul(prev.matrix());
    let image = b.matmul(&coeffs);
    Ok(gram_schmidt(&image)?.basis)
}

/// `‖B − P PᵀB‖_F / ‖B‖_F`, the fraction of `B` that `P` fails to capture.
///
/// Clamped to `[0, 1]`; a zero `B` is an error and callers must branch on it.
pub fn residual_ratio(b: &Matrix, p: &OrthonormalBasis) -> Result<f64, LinalgError> {
    if b.rows() != p.dim() {
        return Err(LinalgError::ShapeMismatch {
            op: "residual_ratio",
            left: b.shape(),
            right: p.matrix().shape(),
        });
    }
    let total = b.frobenius_norm();
    if total == 0.0 {
        return Err(LinalgError::ZeroMatrix {
            op: "residual_ratio",
        });
    }
    let coeffs = p.matrix().t_matmul(b);
    let captured = p.matrix().matmul(&coeffs);
    let residual = b.sub(&captured).frobenius_norm();
    Ok((residual / total).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::truncated_svd;
    use crate::rng::{self, Stream};

    #[test]
    fn single_iteration_on_diagonal() {
        let b = Matrix::diag(&[3.0, 1.0]);
        let s = 1.0 / 2f64.sqrt();
        let prev = OrthonormalBasis::new(Matrix::column_vector(&[s, s])).unwrap();
        let p = block_power_iteration_step(&b, &prev).unwrap();
        // B Bᵀ P ∝ (9, 1)
        let expected = [9.0 / 82f64.sqrt(), 1.0 / 82f64.sqrt()];
        assert!((p.matrix()[(0, 0)] - expected[0]).abs() < 1e-15);
        assert!((p.matrix()[(1, 0)] - expected[1]).abs() < 1e-15);
        assert!((p.matrix()[(0, 0)] - 0.9939).abs() < 1e-4);
    }

    #[test]
    fn zero_matrix_keeps_previous_basis() {
        let prev = OrthonormalBasis::leading_coordinates(4, 2);
        let p = block_power_iteration_step(&Matrix::zeros(4, 3), &prev).unwrap();
        assert_eq!(p, prev);
    }

    #[test]
    fn top_singular_subspace_is_a_fixed_point() {
        let mut rng = rng::stream(3, Stream::Aux);
        let b = rng::gaussian_matrix(&mut rng, 6, 9);
        let top = truncated_svd(&b, 2).unwrap();
        let next = block_power_iteration_step(&b, &top).unwrap();
        // same subspace: projector difference vanishes
        let proj = |p: &OrthonormalBasis| p.matrix().matmul_t(p.matrix());
        assert!(proj(&top).max_abs_diff(&proj(&next)) < 1e-12);
    }

    #[test]
    fn residual_ratio_examples() {
        let b = Matrix::diag(&[4.0, 3.0]);
        let p = truncated_svd(&b, 1).unwrap();
        assert!((residual_ratio(&b, &p).unwrap() - 0.6).abs() < 1e-15);
        let full = OrthonormalBasis::leading_coordinates(2, 2);
        assert_eq!(residual_ratio(&b, &full).unwrap(), 0.0);
        let only_first = Matrix::from_rows(&[&[4.0, 1.0], &[0.0, 0.0]]);
        let orth = OrthonormalBasis::new(Matrix::column_vector(&[0.0, 1.0])).unwrap();
        assert_eq!(residual_ratio(&only_first, &orth).unwrap(), 1.0);
        assert!(matches!(
            residual_ratio(&Matrix::zeros(2, 2), &full),
            Err(LinalgError::ZeroMatrix { .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let prev = OrthonormalBasis::leading_coordinates(3, 1);
        assert!(block_power_iteration_step(&Matrix::zeros(4, 2), &prev).is_err());
    }
}
