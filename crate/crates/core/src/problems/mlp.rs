use std::io;

use rand::Rng as _;

use crate::linalg::Matrix;
use crate::rng::{self, Rng};

use super::{Problem, ProblemError};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    /// Layer widths from input to output; 3 or 4 entries (2 or 3 layers).
    pub widths: Vec<usize>,
    pub n_samples: usize,
    pub batch_size: usize,
    /// Ratio between consecutive singular values of each teacher layer.
    pub teacher_decay: f64,
    /// Standard deviation of the noise added to the teacher's targets.
    pub target_noise: f64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            widths: vec![32, 64, 32],
            n_samples: 1024,
            batch_size: 64,
            teacher_decay: 0.7,
            target_noise: 0.0,
        }
    }
}

/// Regression onto a random teacher network with the same architecture.
///
/// Hidden layers use `tanh`, the output layer is linear, weights are stored
/// `in × out` and act on row vectors. Each teacher weight is
/// `U diag(2·decay^i) Vᵀ` with random orthonormal `U, V`, so the targets
/// depend on few directions and the gradients have a decaying spectrum. The
/// loss is `1/(2N) Σ ‖f(x) − y‖²`.
#[derive(Clone, Debug)]
pub struct MlpProblem {
    config: MlpConfig,
    inputs: Matrix,
    targets: Matrix,
}

struct Forward {
    /// Activations per layer input: `acts[0]` is the batch input, `acts[l]`
    /// the output of hidden layer `l`.
    acts: Vec<Matrix>,
    output: Matrix,
}

impl MlpProblem {
    pub fn new(config: MlpConfig, rng: &mut Rng) -> Result<Self, ProblemError> {
        let c = &config;
        if !(3..=4).contains(&c.widths.len()) || c.widths.contains(&0) {
            return Err(ProblemError::Invalid(
                "an MLP needs 3 or 4 positive widths (2 or 3 layers)".into(),
            ));
        }
        if c.batch_size == 0 || c.batch_size > c.n_samples {
            return Err(ProblemError::Invalid(format!(
                "batch size {} must lie in 1..={}",
                c.batch_size, c.n_samples
            )));
        }
        let teacher: Vec<Matrix> = c
            .widths
            .windows(2)
            .map(|w| {
                let k = w[0].min(w[1]);
                let u = rng::random_orthonormal(rng, w[0], k);
                let v = rng::random_orthonormal(rng, w[1], k);
                let s: Vec<f64> = (0..k)
                    .map(|i| 2.0 * c.teacher_decay.powi(i as i32))
                    .collect();
                u.matrix().matmul(&Matrix::diag(&s)).matmul_t(v.matrix())
            })
            .collect();
        let inputs = rng::gaussian_matrix(rng, c.n_samples, c.widths[0]);
        let mut targets = forward(&teacher, inputs.clone()).output;
        if c.target_noise > 0.0 {
            for y in targets.as_mut_slice() {
                *y += c.target_noise * rng::gaussian(rng);
            }
        }
        Ok(Self {
            config,
            inputs,
            targets,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    fn rows(source: &Matrix, idx: &[usize]) -> Matrix {
        Matrix::from_fn(idx.len(), source.cols(), |i, j| source[(idx[i], j)])
    }

    fn batch_loss(&self, params: &[Matrix], x: Matrix, y: &Matrix) -> f64 {
        let out = forward(params, x).output;
        0.5 * out.sub(y).frobenius_norm_sq() / y.rows() as f64
    }

    fn batch_gradient(&self, params: &[Matrix], x: Matrix, y: &Matrix) -> Vec<Matrix> {
        let b = y.rows() as f64;
        let fwd = forward(params, x);
        let mut delta = fwd.output.sub(y).scale(1.0 / b);
        let mut grads = vec![Matrix::zeros(1, 1); params.len()];
        for l in (0..params.len()).rev() {
            grads[l] = fwd.acts[l].t_matmul(&delta);
            if l > 0 {
                let back = delta.matmul_t(&params[l]);
                delta = back.zip_map(&fwd.acts[l], |d, h| d * (1.0 - h * h));
            }
        }
        grads
    }
}

fn forward(weights: &[Matrix], x: Matrix) -> Forward {
    let mut acts = vec![x];
    let last = weights.len() - 1;
    for (l, w) in weights.iter().enumerate() {
        let z = acts[l].matmul(w);
        if l == last {
            return Forward { acts, output: z };
        }
        acts.push(z.map(f64::tanh));
    }
    unreachable!("weights is non-empty")
}

impl Problem for MlpProblem {
    fn name(&self) -> &str {
        "mlp"
    }

    fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.config
            .widths
            .windows(2)
            .map(|w| (w[0], w[1]))
            .collect()
    }

    fn loss(&self, params: &[Matrix]) -> f64 {
        self.batch_loss(params, self.inputs.clone(), &self.targets)
    }

    fn gradient(&self, params: &[Matrix]) -> Vec<Matrix> {
        self.batch_gradient(params, self.inputs.clone(), &self.targets)
    }

    fn stochastic_gradient(&self, params: &[Matrix], rng: &mut Rng) -> Vec<Matrix> {
        let idx: Vec<usize> = (0..self.config.batch_size)
            .map(|_| rng.random_range(0..self.config.n_samples))
            .collect();
        let x = Self::rows(&self.inputs, &idx);
        let y = Self::rows(&self.targets, &idx);
        self.batch_gradient(params, x, &y)
    }

    /// Gaussian with variance `1/fan_in`.
    fn initial_params(&self, rng: &mut Rng) -> Vec<Matrix> {
        self.param_shapes()
            .into_iter()
            .map(|(n, m)| rng::gaussian_matrix(rng, n, m).scale(1.0 / (n as f64).sqrt()))
            .collect()
    }

    fn optimum(&self) -> Option<f64> {
        (self.config.target_noise == 0.0).then_some(0.0)
    }

    fn dump_data(&self, out: &mut dyn io::Write) -> io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let (din, dout) = (self.inputs.cols(), self.targets.cols());
        let mut header: Vec<String> = (0..din).map(|j| format!("x{j}")).collect();
        header.extend((0..dout).map(|j| format!("y{j}")));
        w.write_record(&header)?;
        for i in 0..self.inputs.rows() {
            let row: Vec<String> = self
                .inputs
                .row(i)
                .iter()
                .chain(self.targets.row(i))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&row)?;
        }
        w.flush()
    }
}
