#![allow(dead_code)]

use stablebound::numerics::{spectral_norm, Matrix, SeededRng};
use stablebound::{Activation, RnnSystem};

pub fn gaussian_matrix(rng: &mut SeededRng, rows: usize, cols: usize, std: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.normal(std)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn gaussian_vec(rng: &mut SeededRng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| rng.normal(std)).collect()
}

/// Uniform point in the Euclidean ball of the given radius.
pub fn ball_vec(rng: &mut SeededRng, n: usize, radius: f64) -> Vec<f64> {
    let dir = gaussian_vec(rng, n, 1.0);
    let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let r = radius * rng.uniform().powf(1.0 / n as f64);
    dir.into_iter().map(|x| x * r / norm).collect()
}

pub fn pick<T: Copy>(rng: &mut SeededRng, items: &[T]) -> T {
    items[((rng.uniform() * items.len() as f64) as usize).min(items.len() - 1)]
}

pub fn size(rng: &mut SeededRng, lo: usize, hi: usize) -> usize {
    lo + ((rng.uniform() * (hi - lo + 1) as f64) as usize).min(hi - lo)
}

/// Random RNN block whose state map has contraction rate exactly `rate`.
#[allow(clippy::too_many_arguments)]
pub fn random_rnn(
    rng: &mut SeededRng,
    n_s: usize,
    n_v: usize,
    n_y: usize,
    rate: f64,
    sigma_f: Activation,
    sigma_g: Activation,
    with_bias: bool,
) -> RnnSystem {
    let a = gaussian_matrix(rng, n_s, n_s, 1.0);
    let a = a.scale(rate / (sigma_f.lipschitz() * spectral_norm(&a).unwrap()));
    let bias_std = if with_bias { 0.5 } else { 0.0 };
    RnnSystem::new(
        a,
        gaussian_matrix(rng, n_s, n_v, 0.7),
        gaussian_vec(rng, n_s, bias_std),
        gaussian_matrix(rng, n_y, n_s, 0.7),
        gaussian_matrix(rng, n_y, n_v, 0.7),
        gaussian_vec(rng, n_y, bias_std),
        sigma_f,
        sigma_g,
    )
    .unwrap()
}

pub fn input_sequence(rng: &mut SeededRng, len: usize, dim: usize, radius: f64) -> Vec<Vec<f64>> {
    (0..len).map(|_| ball_vec(rng, dim, radius)).collect()
}
