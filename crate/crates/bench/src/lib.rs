//! Benchmark fixtures.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xmorph::KemaInputs;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// A symmetric matrix and a well-conditioned SPD one of order `n`.
pub fn symmetric_pair(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut r = rng(seed);
    let a = random_matrix(n, n, &mut r);
    let g = random_matrix(n, n, &mut r);
    let b = &g * g.transpose() + DMatrix::identity(n, n) * n as f64;
    (&a + a.transpose(), b)
}

/// `n` labeled points per domain in `classes` clusters, domains of width
/// `d1` and `d2`.
pub fn clustered(n: usize, d: usize, classes: usize, rng: &mut impl Rng) -> (DMatrix<f64>, Vec<String>) {
    let centers = random_matrix(classes, d, rng) * 4.0;
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let x = DMatrix::from_fn(n, d, |i, j| centers[(labels[i], j)] + rng.random_range(-1.0..1.0));
    (x, labels.iter().map(|l| format!("c{l}")).collect())
}

pub fn kema_problem(n: usize, seed: u64) -> KemaInputs {
    let mut r = rng(seed);
    let (x1, y1) = clustered(n, 30, 4, &mut r);
    let (x2, y2) = clustered(n, 60, 4, &mut r);
    KemaInputs::from_parts(x1, y1, x2, y2).expect("consistent fixture")
}
