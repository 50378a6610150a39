use std::io;

use serde::Serialize;

use crate::linalg::{symmetric_eigen, Matrix};
use crate::rng::{self, Rng};

use super::{check_shapes, flatten, param_count, unflatten, Problem, ProblemError};

#[derive(Clone, Debug, PartialEq)]
pub enum Hessian {
    Dense(Matrix),
    Diagonal(Vec<f64>),
}

impl Hessian {
    pub fn dim(&self) -> usize {
        match self {
            Hessian::Dense(h) => h.rows(),
            Hessian::Diagonal(d) => d.len(),
        }
    }

    fn apply(&self, u: &[f64]) -> Vec<f64> {
        match self {
            Hessian::Dense(h) => (0..h.rows())
                .map(|i| h.row(i).iter().zip(u).map(|(a, b)| a * b).sum())
                .collect(),
            Hessian::Diagonal(d) => d.iter().zip(u).map(|(a, b)| a * b).collect(),
        }
    }
}

/// `f(θ) = ½ (θ − θ*)ᵀ H (θ − θ*)` over the row-major concatenation of all
/// layers, with additive Gaussian gradient noise `𝒩(0, σ²/d · I)`.
#[derive(Clone, Debug)]
pub struct QuadraticProblem {
    shapes: Vec<(usize, usize)>,
    hessian: Hessian,
    theta_star: Vec<f64>,
    sigma: f64,
    mu: f64,
    l: f64,
}

impl QuadraticProblem {
    pub fn new(
        shapes: Vec<(usize, usize)>,
        hessian: Hessian,
        theta_star: Vec<f64>,
        sigma: f64,
    ) -> Result<Self, ProblemError> {
        check_shapes(&shapes)?;
        let d = param_count(&shapes);
        if hessian.dim() != d || theta_star.len() != d {
            return Err(ProblemError::Invalid(format!(
                "Hessian of size {} and minimizer of length {} do not match {d} parameters",
                hessian.dim(),
                theta_star.len()
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(ProblemError::Invalid(format!(
                "noise sigma must be >= 0, got {sigma}"
            )));
        }
        let (mu, l) = match &hessian {
            Hessian::Dense(h) => {
                if h.cols() != h.rows() || h.max_abs_diff(&h.transpose()) > 1e-12 * h.max_abs() {
                    return Err(ProblemError::Invalid("Hessian must be symmetric".into()));
                }
                let eig = symmetric_eigen(h)?;
                (eig.values[d - 1], eig.values[0])
            }
            Hessian::Diagonal(diag) => {
                if diag.iter().any(|x| !x.is_finite()) {
                    return Err(ProblemError::Invalid("Hessian must be finite".into()));
                }
                let lo = diag.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
        };
        if !(mu > 0.0) {
            return Err(ProblemError::NotPositiveDefinite(mu));
        }
        Ok(Self {
            shapes,
            hessian,
            theta_star,
            sigma,
            mu,
            l,
        })
    }

    /// Random instance with eigenvalues spaced geometrically in `[mu, l]`.
    ///
    /// With `dense`, the eigenbasis is a random rotation; otherwise the
    /// Hessian is diagonal (with shuffled eigenvalues), which keeps large
    /// layers cheap. `θ*` is standard Gaussian. All draws come from `rng`.
    pub fn random(
        shapes: Vec<(usize, usize)>,
        mu: f64,
        l: f64,
        dense: bool,
        sigma: f64,
        rng: &mut Rng,
    ) -> Result<Self, ProblemError> {
        check_shapes(&shapes)?;
        if !(mu > 0.0 && l >= mu) {
            return Err(ProblemError::Invalid(format!(
                "need 0 < mu <= L, got {mu}, {l}"
            )));
        }
        let d = param_count(&shapes);
        let spectrum: Vec<f64> = (0..d)
            .map(|i| {
                let frac = if d == 1 {
                    0.0
                } else {
                    i as f64 / (d - 1) as f64
                };
                mu * (l / mu).powf(frac)
            })
            .collect();
        let hessian = if dense {
            let q = rng::random_orthonormal(rng, d, d);
            let q = q.matrix();
            let h = q.matmul(&Matrix::diag(&spectrum)).matmul_t(q);
            let sym = Matrix::from_fn(d, d, |i, j| 0.5 * (h[(i, j)] + h[(j, i)]));
            Hessian::Dense(sym)
        } else {
            let mut order: Vec<usize> = (0..d).collect();
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
            Hessian::Diagonal(order.iter().map(|&i| spectrum[i]).collect())
        };
        let theta_star = rng::gaussian_vec(rng, d);
        let mut problem = Self::new(shapes, hessian, theta_star, sigma)?;
        // keep the requested constants exactly rather than the eigen-solver's
        // rounding of them
        if dense {
            problem.mu = problem.mu.min(mu);
            problem.l = problem.l.max(l);
        }
        Ok(problem)
    }

    pub fn hessian(&self) -> &Hessian {
        &self.hessian
    }

    pub fn theta_star(&self) -> Vec<Matrix> {
        unflatten(&self.theta_star, &self.shapes)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `uᵀ H u / uᵀ u` for a direction given in layer form.
    pub fn rayleigh_quotient(&self, direction: &[Matrix]) -> f64 {
        let u = flatten(direction);
        let hu = self.hessian.apply(&u);
        let num: f64 = u.iter().zip(&hu).map(|(a, b)| a * b).sum();
        let den: f64 = u.iter().map(|a| a * a).sum();
        num / den
    }

    fn offset(&self, params: &[Matrix]) -> Vec<f64> {
        flatten(params)
            .iter()
            .zip(&self.theta_star)
            .map(|(a, b)| a - b)
            .collect()
    }
}

impl Problem for QuadraticProblem {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.shapes.clone()
    }

    fn loss(&self, params: &[Matrix]) -> f64 {
        let u = self.offset(params);
        let hu = self.hessian.apply(&u);
        0.5 * u.iter().zip(&hu).map(|(a, b)| a * b).sum::<f64>()
    }

    fn gradient(&self, params: &[Matrix]) -> Vec<Matrix> {
        let u = self.offset(params);
        unflatten(&self.hessian.apply(&u), &self.shapes)
    }

    fn stochastic_gradient(&self, params: &[Matrix], rng: &mut Rng) -> Vec<Matrix> {
        let mut g = self.gradient(params);
        if self.sigma > 0.0 {
            let scale = self.sigma / (self.theta_star.len() as f64).sqrt();
            for layer in &mut g {
                for x in layer.as_mut_slice() {
                    *x += scale * rng::gaussian(rng);
                }
            }
        }
        g
    }

    fn initial_params(&self, rng: &mut Rng) -> Vec<Matrix> {
        self.shapes
            .iter()
            .map(|&(n, m)| rng::gaussian_matrix(rng, n, m))
            .collect()
    }

    fn optimum(&self) -> Option<f64> {
        Some(0.0)
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.l)
    }

    fn pl_constant(&self) -> Option<f64> {
        Some(self.mu)
    }

    fn noise_variance(&self) -> Option<f64> {
        Some(self.sigma * self.sigma)
    }

    fn dump_data(&self, out: &mut dyn io::Write) -> io::Result<()> {
        #[derive(Serialize)]
        struct Row {
            row: usize,
            col: usize,
            hessian: f64,
            theta_star: f64,
        }
        let mut w = csv::Writer::from_writer(out);
        let d = self.theta_star.len();
        for i in 0..d {
            let cols: Vec<(usize, f64)> = match &self.hessian {
                Hessian::Dense(h) => (0..d).map(|j| (j, h[(i, j)])).collect(),
                Hessian::Diagonal(diag) => vec![(i, diag[i])],
            };
            for (j, value) in cols {
                w.serialize(Row {
                    row: i,
                    col: j,
                    hessian: value,
                    theta_star: self.theta_star[i],
                })?;
            }
        }
        w.flush()
    }
}
