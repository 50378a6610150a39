use super::{dot, LinalgError, Matrix, OrthonormalBasis};
use crate::rng::{self, Stream};

/// Relative threshold below which a column is considered linearly dependent
/// on the columns already accepted.
const DEGENERACY_TOL: f64 = 1e-12;

/// Result of [`gram_schmidt`].
#[derive(Clone, Debug)]
pub struct GramSchmidt {
    pub basis: OrthonormalBasis,
    /// Indices of input columns that were numerically dependent and got
    /// replaced by a deterministic substitute.
    pub substituted: Vec<usize>,
}

impl GramSchmidt {
    pub fn degeneracy_count(&self) -> usize {
        self.substituted.len()
    }
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
///
/// Column `j` is dropped as degenerate when its norm after projection is at
/// most `1e-12 × ‖input column j‖` (or exactly zero). A dropped column is
/// replaced by a pseudo-random unit vector drawn from a stream seeded by `j`
/// and orthogonalized against the columns kept so far, so the output always
/// has full rank `r` and is a pure function of the input.
pub fn gram_schmidt(m: &Matrix) -> Result<GramSchmidt, LinalgError> {
    let (n, r) = m.shape();
    if r > n {
        return Err(LinalgError::RankOutOfRange {
            rank: r,
            rows: n,
            cols: n,
        });
    }
    if !m.is_finite() {
        return Err(LinalgError::NonFinite { op: "gram_schmidt" });
    }

    let mut kept: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut substituted = Vec::new();
    for j in 0..r {
        let mut v = m.column(j);
        let input_norm = norm(&v);
        project_out_twice(&mut v, &kept);
        let residual = norm(&v);
        if residual > 0.0 && residual > DEGENERACY_TOL * input_norm {
            v.iter_mut().for_each(|x| *x /= residual);
        } else {
            v = substitute_column(j, n, &kept);
            substituted.push(j);
        }
        kept.push(v);
    }

    let mut out = Matrix::zeros(n, r);
    for (j, col) in kept.iter().enumerate() {
        out.set_column(j, col);
    }
    Ok(GramSchmidt {
        basis: OrthonormalBasis::from_matrix_unchecked(out),
        substituted,
    })
}

/// Extends `P` (n×r) to an orthogonal `n × n` matrix whose first `r` columns
/// are `P`.
///
/// Completion columns are picked greedily from the canonical basis, each time
/// taking the coordinate vector with the largest component outside the span
/// built so far.
pub fn orthogonal_complete(p: &OrthonormalBasis) -> Matrix {
    let n = p.dim();
    let r = p.rank();
    let mut cols: Vec<Vec<f64>> = (0..r).map(|j| p.matrix().column(j)).collect();

    // residuals[i] = e_i with the current span projected out
    let mut residuals: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            for q in &cols {
                let c = q[i];
                e.iter_mut().zip(q).for_each(|(x, qk)| *x -= c * qk);
            }
            e
        })
        .collect();
    let mut used = vec![false; n];

    while cols.len() < n {
        let (best, _) = residuals
            .iter()
            .enumerate()
            .filter(|(i, _)| !used[*i])
            .map(|(i, v)| (i, norm(v)))
            .fold(
                (usize::MAX, -1.0),
                |acc, (i, nv)| if nv > acc.1 { (i, nv) } else { acc },
            );
        used[best] = true;
        let mut v = residuals[best].clone();
        project_out_twice(&mut v, &cols);
        let nv = norm(&v);
        v.iter_mut().for_each(|x| *x /= nv);
        for (i, res) in residuals.iter_mut().enumerate() {
            if !used[i] {
                let c = dot(&v, res);
                res.iter_mut().zip(&v).for_each(|(x, q)| *x -= c * q);
            }
        }
        cols.push(v);
    }

    let mut q = Matrix::zeros(n, n);
    for (j, col) in cols.iter().enumerate() {
        q.set_column(j, col);
    }
    q
}

/// Euclidean norm, rescaled so tiny or huge columns do not under/overflow.
fn norm(v: &[f64]) -> f64 {
    let scale = v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    scale
        * v.iter()
            .map(|x| (x / scale) * (x / scale))
            .sum::<f64>()
            .sqrt()
}

fn project_out_twice(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, v);
            v.iter_mut().zip(q).for_each(|(x, qk)| *x -= c * qk);
        }
    }
}

fn substitute_column(j: usize, n: usize, kept: &[Vec<f64>]) -> Vec<f64> {
    let mut rng = rng::stream(j as u64, Stream::Substitute);
    loop {
        let mut v = rng::gaussian_vec(&mut rng, n);
        let input_norm = norm(&v);
        project_out_twice(&mut v, kept);
        let residual = norm(&v);
        // a Gaussian draw is almost surely well outside a proper subspace
        if residual > 1e-6 * input_norm {
            v.iter_mut().for_each(|x| *x /= residual);
            return v;
        }
    }
}
