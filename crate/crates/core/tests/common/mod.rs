#![allow(dead_code)]

use kantorovich_core::{CostMatrix, GroundMetric, SquareMatrix};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Euclidean distances between `d` random points in a 10 x 10 square.
pub fn random_metric(rng: &mut impl Rng, d: usize) -> GroundMetric {
    let pts: Vec<[f64; 2]> = (0..d).map(|_| [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)]).collect();
    GroundMetric::new(SquareMatrix::from_fn(d, |i, j| {
        if i == j {
            0.0
        } else {
            ((pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2)).sqrt()
        }
    }))
    .unwrap()
}

/// Points `0, 1, ..., d-1` on a line.
pub fn line_metric(d: usize) -> GroundMetric {
    GroundMetric::new(SquareMatrix::from_fn(d, |i, j| (i as f64 - j as f64).abs())).unwrap()
}

/// Random non-negative vector with total mass `mass`.
pub fn random_with_mass(rng: &mut impl Rng, d: usize, mass: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..d).map(|_| rng.random_range(0.0..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x * mass / s).collect()
}

/// Random histogram with mass drawn from `[lo, hi]`.
pub fn random_histogram(rng: &mut impl Rng, d: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mass = rng.random_range(lo..=hi);
    random_with_mass(rng, d, mass)
}

pub fn random_probability(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    random_with_mass(rng, n, 1.0)
}

/// Random symmetric cost with zero diagonal and entries in [0, 1).
pub fn random_symmetric_cost(rng: &mut impl Rng, n: usize) -> CostMatrix {
    let mut m = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            let x = rng.random_range(0.0..1.0);
            m.set(i, j, x);
            m.set(j, i, x);
        }
    }
    CostMatrix::new(m).unwrap()
}

pub fn random_cost(rng: &mut impl Rng, n: usize) -> CostMatrix {
    CostMatrix::new(SquareMatrix::from_fn(n, |_, _| rng.random_range(0.0..1.0))).unwrap()
}

pub fn rel_close(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol * x.abs().max(y.abs()).max(1e-300)
}
