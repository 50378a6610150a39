use std::io;

use crate::linalg::Matrix;
use crate::rng::{self, Rng};

use super::{check_shapes, flatten, param_count, unflatten, Problem, ProblemError};

/// Chained Rosenbrock `Σᵢ 100 (x_{i+1} − xᵢ²)² + (1 − xᵢ)²` over the
/// row-major concatenation of all layers, minimized at all-ones with `f* = 0`.
/// Stochastic gradients add isotropic Gaussian noise of total variance `σ²`.
#[derive(Clone, Debug)]
pub struct RosenbrockProblem {
    shapes: Vec<(usize, usize)>,
    sigma: f64,
}

impl RosenbrockProblem {
    pub fn new(shapes: Vec<(usize, usize)>, sigma: f64) -> Result<Self, ProblemError> {
        check_shapes(&shapes)?;
        let d = param_count(&shapes);
        if d < 2 || !d.is_multiple_of(2) {
            return Err(ProblemError::Invalid(format!(
                "Rosenbrock needs an even dimension >= 2, got {d}"
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(ProblemError::Invalid(format!(
                "noise sigma must be >= 0, got {sigma}"
            )));
        }
        Ok(Self { shapes, sigma })
    }

    /// A single `d × 1` parameter vector.
    pub fn vector(d: usize, sigma: f64) -> Result<Self, ProblemError> {
        Self::new(vec![(d, 1)], sigma)
    }
}

impl Problem for RosenbrockProblem {
    fn name(&self) -> &str {
        "rosenbrock"
    }

    fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.shapes.clone()
    }

    fn loss(&self, params: &[Matrix]) -> f64 {
        let x = flatten(params);
        x.windows(2)
            .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
            .sum()
    }

    fn gradient(&self, params: &[Matrix]) -> Vec<Matrix> {
        let x = flatten(params);
        let mut g = vec![0.0; x.len()];
        for i in 0..x.len() - 1 {
            let r = x[i + 1] - x[i] * x[i];
            g[i] += -400.0 * x[i] * r - 2.0 * (1.0 - x[i]);
            g[i + 1] += 200.0 * r;
        }
        unflatten(&g, &self.shapes)
    }

    fn stochastic_gradient(&self, params: &[Matrix], rng: &mut Rng) -> Vec<Matrix> {
        let mut g = self.gradient(params);
        if self.sigma > 0.0 {
            let scale = self.sigma / (param_count(&self.shapes) as f64).sqrt();
            for layer in &mut g {
                for x in layer.as_mut_slice() {
                    *x += scale * rng::gaussian(rng);
                }
            }
        }
        g
    }

    /// Uniform in `[-1.5, 1.5]` per coordinate.
    fn initial_params(&self, rng: &mut Rng) -> Vec<Matrix> {
        use rand::Rng as _;
        self.shapes
            .iter()
            .map(|&(n, m)| Matrix::from_fn(n, m, |_, _| rng.random_range(-1.5..1.5)))
            .collect()
    }

    fn optimum(&self) -> Option<f64> {
        Some(0.0)
    }

    fn noise_variance(&self) -> Option<f64> {
        Some(self.sigma * self.sigma)
    }

    fn dump_data(&self, out: &mut dyn io::Write) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["dimension", "sigma"])?;
        w.write_record([
            param_count(&self.shapes).to_string(),
            self.sigma.to_string(),
        ])?;
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::finite_diff_check;
    use crate::rng::Stream;

    #[test]
    fn optimum_at_all_ones() {
        let p = RosenbrockProblem::vector(6, 0.0).unwrap();
        let ones = vec![Matrix::from_fn(6, 1, |_, _| 1.0)];
        assert_eq!(p.loss(&ones), 0.0);
        assert_eq!(p.gradient(&ones)[0], Matrix::zeros(6, 1));
    }

    #[test]
    fn value_at_origin_in_two_dimensions() {
        let p = RosenbrockProblem::vector(2, 0.0).unwrap();
        assert_eq!(p.loss(&[Matrix::zeros(2, 1)]), 1.0);
        let err = finite_diff_check(&p, &[Matrix::zeros(2, 1)], 1e-6);
        assert!(err <= 1e-5, "{err}");
    }

    #[test]
    fn gradient_matches_finite_differences_on_matrix_layers() {
        let p = RosenbrockProblem::new(vec![(2, 3), (1, 4)], 0.0).unwrap();
        let mut rng = rng::stream(3, Stream::Init);
        for _ in 0..5 {
            let theta = p.initial_params(&mut rng);
            let err = finite_diff_check(&p, &theta, 1e-6);
            assert!(err <= 1e-5, "{err}");
        }
    }

    #[test]
    fn odd_dimension_is_rejected() {
        assert!(RosenbrockProblem::vector(3, 0.0).is_err());
        assert!(RosenbrockProblem::vector(0, 0.0).is_err());
    }
}
