use super::{gram_schmidt, LinalgError, Matrix, OrthonormalBasis};

const MAX_SWEEPS: usize = 64;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Matching unit eigenvectors, one per column.
    pub vectors: Matrix,
}

/// Cyclic Jacobi eigen-solver for symmetric matrices.
///
/// Only the symmetric part of the input is used. Eigenvalues come back sorted
/// in descending order; equal eigenvalues keep the order in which the sweep
/// leaves them on the diagonal (a stable sort), so the output is fully
/// deterministic.
pub fn symmetric_eigen(a: &Matrix) -> Result<SymmetricEigen, LinalgError> {
    let n = a.rows();
    if a.cols() != n {
        return Err(LinalgError::ShapeMismatch {
            op: "symmetric_eigen",
            left: a.shape(),
            right: a.shape(),
        });
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite {
            op: "symmetric_eigen",
        });
    }
    let mut w = Matrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Matrix::identity(n);
    let scale = w.frobenius_norm();

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += w[(p, q)] * w[(p, q)];
            }
        }
        if off.sqrt() <= 1e-17 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = w[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (w[(q, q)] - w[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = w[(k, p)];
                    let akq = w[(k, q)];
                    w[(k, p)] = c * akp - s * akq;
                    w[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = w[(p, k)];
                    let aqk = w[(q, k)];
                    w[(p, k)] = c * apk - s * aqk;
                    w[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| w[(j, j)].total_cmp(&w[(i, i)]));
    let values = order.iter().map(|&i| w[(i, i)]).collect();
    let vectors = Matrix::from_fn(n, n, |row, col| v[(row, order[col])]);
    Ok(SymmetricEigen { values, vectors })
}

/// The `r` leading left singular vectors of `B`.
///
/// Computed from the eigen-decomposition of the smaller Gram matrix (`BBᵀ`
/// when `n ≤ m`, otherwise `BᵀB` followed by `u = Bv/σ`). Columns whose
/// singular value is numerically zero, and columns beyond `min(n, m)` when
/// `r > m`, are completed by [`gram_schmidt`]'s deterministic substitution.
/// Each column is sign-normalized so its largest-magnitude entry (first one
/// on ties) is positive.
pub fn truncated_svd(b: &Matrix, r: usize) -> Result<OrthonormalBasis, LinalgError> {
    let (n, m) = b.shape();
    if r == 0 || r > n {
        return Err(LinalgError::RankOutOfRange {
            rank: r,
            rows: n,
            cols: m,
        });
    }
    if !b.is_finite() {
        return Err(LinalgError::NonFinite {
            op: "truncated_svd",
        });
    }

    let candidates = if n <= m {
        let eig = symmetric_eigen(&b.matmul_t(b))?;
        eig.vectors.block(0, 0, n, r)
    } else {
        let eig = symmetric_eigen(&b.t_matmul(b))?;
        let sigma_max = eig.values[0].max(0.0).sqrt();
        let mut u = Matrix::zeros(n, r);
        for k in 0..r.min(m) {
            let sigma = eig.values[k].max(0.0).sqrt();
            if sigma <= 1e-13 * sigma_max || sigma == 0.0 {
                continue;
            }
            let vk = Matrix::column_vector(&eig.vectors.column(k));
            let uk = b.matmul(&vk);
            u.set_column(k, &uk.scale(1.0 / sigma).into_vec());
        }
        u
    };

    let mut basis = gram_schmidt(&candidates)?.basis;
    for j in 0..r {
        let col = basis.matrix().column(j);
        let mut lead = 0;
        for (i, x) in col.iter().enumerate() {
            if x.abs() > col[lead].abs() {
                lead = i;
            }
        }
        if col[lead] < 0.0 {
            basis.negate_column(j);
        }
    }
    Ok(basis)
}
