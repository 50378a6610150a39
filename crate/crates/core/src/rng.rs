//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), a
//! counter-based generator: a `u64` seed is expanded with `seed_from_u64`, and
//! independent purposes are separated by ChaCha's 64-bit stream id rather than
//! by reseeding. Gaussian samples use `rand_distr::StandardNormal`. Given the
//! same seed and the same call sequence, every trajectory is reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::{gram_schmidt, Matrix, OrthonormalBasis};

pub type Rng = ChaCha8Rng;

/// Stream ids. Each purpose draws from its own stream of the experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Synthetic dataset generation.
    Data = 1,
    /// Initial parameters.
    Init = 2,
    /// Stochastic gradient noise and mini-batch sampling.
    Gradient = 3,
    /// Substitute columns for degenerate Gram-Schmidt input.
    Substitute = 4,
    /// Free stream for tests and checks.
    Aux = 5,
}

pub fn stream(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

pub fn gaussian(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn gaussian_vec(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| gaussian(rng)).collect()
}

pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| gaussian(rng))
}

/// Orthonormal `n × r` basis from a Gaussian draw.
pub fn random_orthonormal(rng: &mut Rng, n: usize, r: usize) -> OrthonormalBasis {
    let g = gaussian_matrix(rng, n, r);
    gram_schmidt(&g).expect("gaussian draws are finite").basis
}
