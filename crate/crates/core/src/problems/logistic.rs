use std::io;

use rand::Rng as _;

use crate::linalg::{symmetric_eigen, Matrix};
use crate::rng::{self, Rng};

use super::{Problem, ProblemError};

#[derive(Clone, Debug, PartialEq)]
pub struct LogisticConfig {
    pub n_samples: usize,
    pub n_features: usize,
    pub classes: usize,
    pub batch_size: usize,
    /// ℓ2 regularization strength `λ`.
    pub l2: f64,
    /// Scale of the class means relative to the unit within-class noise.
    pub separation: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            n_samples: 512,
            n_features: 24,
            classes: 4,
            batch_size: 32,
            l2: 1e-2,
            separation: 1.0,
        }
    }
}

/// ℓ2-regularized multinomial logistic regression on Gaussian class clouds.
///
/// The single parameter is the `classes × n_features` weight matrix `W`;
/// the loss is the mean cross-entropy of `softmax(W x)` plus `λ/2 ‖W‖²`.
/// Mini-batches are drawn uniformly with replacement.
#[derive(Clone, Debug)]
pub struct LogisticProblem {
    config: LogisticConfig,
    features: Matrix,
    labels: Vec<usize>,
    smoothness: f64,
}

impl LogisticProblem {
    /// Draws the dataset from `rng`.
    pub fn new(config: LogisticConfig, rng: &mut Rng) -> Result<Self, ProblemError> {
        let c = &config;
        if c.n_samples == 0 || c.n_features == 0 || c.classes < 2 {
            return Err(ProblemError::Invalid(
                "need samples, features and at least two classes".into(),
            ));
        }
        if c.batch_size == 0 || c.batch_size > c.n_samples {
            return Err(ProblemError::Invalid(format!(
                "batch size {} must lie in 1..={}",
                c.batch_size, c.n_samples
            )));
        }
        if !(c.l2 >= 0.0) {
            return Err(ProblemError::Invalid("l2 must be non-negative".into()));
        }
        let means = rng::gaussian_matrix(rng, c.classes, c.n_features).scale(c.separation);
        let labels: Vec<usize> = (0..c.n_samples)
            .map(|_| rng.random_range(0..c.classes))
            .collect();
        let noise = rng::gaussian_matrix(rng, c.n_samples, c.n_features);
        let features = Matrix::from_fn(c.n_samples, c.n_features, |i, j| {
            means[(labels[i], j)] + noise[(i, j)]
        });
        let gram = features.t_matmul(&features).scale(1.0 / c.n_samples as f64);
        let top = symmetric_eigen(&gram)?.values[0];
        Ok(Self {
            smoothness: c.l2 + 0.5 * top,
            config,
            features,
            labels,
        })
    }

    pub fn config(&self) -> &LogisticConfig {
        &self.config
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Gradient of the data term on one sample, added into `out` with `weight`.
    fn add_sample_gradient(&self, w: &Matrix, i: usize, weight: f64, out: &mut Matrix) {
        let x = self.features.row(i);
        let probs = softmax(&logits(w, x));
        for (k, p) in probs.iter().enumerate() {
            let coef = weight * (p - if k == self.labels[i] { 1.0 } else { 0.0 });
            for (j, xj) in x.iter().enumerate() {
                out[(k, j)] += coef * xj;
            }
        }
    }

    fn regularize(&self, w: &Matrix, grad: &mut Matrix) {
        grad.axpy(self.config.l2, w);
    }
}

fn logits(w: &Matrix, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|k| w.row(k).iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - top).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    top + z.iter().map(|v| (v - top).exp()).sum::<f64>().ln()
}

impl Problem for LogisticProblem {
    fn name(&self) -> &str {
        "logistic"
    }

    fn param_shapes(&self) -> Vec<(usize, usize)> {
        vec![(self.config.classes, self.config.n_features)]
    }

    fn loss(&self, params: &[Matrix]) -> f64 {
        let w = &params[0];
        let n = self.config.n_samples;
        let data: f64 = (0..n)
            .map(|i| {
                let z = logits(w, self.features.row(i));
                log_sum_exp(&z) - z[self.labels[i]]
            })
            .sum();
        data / n as f64 + 0.5 * self.config.l2 * w.frobenius_norm_sq()
    }

    fn gradient(&self, params: &[Matrix]) -> Vec<Matrix> {
        let w = &params[0];
        let n = self.config.n_samples;
        let mut g = Matrix::zeros(w.rows(), w.cols());
        for i in 0..n {
            self.add_sample_gradient(w, i, 1.0 / n as f64, &mut g);
        }
        self.regularize(w, &mut g);
        vec![g]
    }

    fn stochastic_gradient(&self, params: &[Matrix], rng: &mut Rng) -> Vec<Matrix> {
        let w = &params[0];
        let b = self.config.batch_size;
        let mut g = Matrix::zeros(w.rows(), w.cols());
        for _ in 0..b {
            let i = rng.random_range(0..self.config.n_samples);
            self.add_sample_gradient(w, i, 1.0 / b as f64, &mut g);
        }
        self.regularize(w, &mut g);
        vec![g]
    }

    fn initial_params(&self, rng: &mut Rng) -> Vec<Matrix> {
        let c = &self.config;
        vec![rng::gaussian_matrix(rng, c.classes, c.n_features).scale(0.1)]
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.smoothness)
    }

    fn pl_constant(&self) -> Option<f64> {
        (self.config.l2 > 0.0).then_some(self.config.l2)
    }

    fn dump_data(&self, out: &mut dyn io::Write) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["label".to_string()];
        header.extend((0..self.config.n_features).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.config.n_samples {
            let mut row = vec![self.labels[i].to_string()];
            row.extend(self.features.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::finite_diff_check;
    use crate::rng::Stream;

    fn small() -> LogisticProblem {
        let config = LogisticConfig {
            n_samples: 40,
            n_features: 5,
            classes: 3,
            batch_size: 8,
            ..Default::default()
        };
        LogisticProblem::new(config, &mut rng::stream(1, Stream::Data)).unwrap()
    }

    #[test]
    fn full_gradient_is_mean_of_sample_gradients() {
        let p = small();
        let w = p.initial_params(&mut rng::stream(1, Stream::Init));
        let mut manual = Matrix::zeros(3, 5);
        for i in 0..40 {
            let mut one = Matrix::zeros(3, 5);
            p.add_sample_gradient(&w[0], i, 1.0, &mut one);
            manual.axpy(1.0 / 40.0, &one);
        }
        manual.axpy(p.config.l2, &w[0]);
        assert!(manual.max_abs_diff(&p.gradient(&w)[0]) < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = small();
        let mut rng = rng::stream(2, Stream::Init);
        for _ in 0..5 {
            let w = p.initial_params(&mut rng);
            let err = finite_diff_check(&p, &w, 1e-5);
            assert!(err <= 1e-5, "{err}");
        }
    }

    #[test]
    fn regularization_gives_pl_constant() {
        let p = small();
        assert_eq!(p.pl_constant(), Some(1e-2));
        assert!(p.smoothness().unwrap() > 1e-2);
    }

    #[test]
    fn batch_size_is_validated() {
        let config = LogisticConfig {
            n_samples: 4,
            batch_size: 5,
            ..Default::default()
        };
        assert!(LogisticProblem::new(config, &mut rng::stream(1, Stream::Data)).is_err());
    }
}
