//! Seeded inputs shared by the benchmarks.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use restoretime::seed;

/// `m` points around the four corners of the unit square in `dims` dimensions
/// (extra dimensions are pure noise).
pub fn blobs(m: usize, dims: usize, sigma: f64, seed: u64) -> Array2<f64> {
    let mut rng = seed::rng(seed);
    let noise = Normal::new(0.0, sigma).expect("sigma is positive");
    let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    Array2::from_shape_fn((m, dims), |(i, j)| {
        let base = if j < 2 { corners[i % 4][j] } else { 0.0 };
        base + noise.sample(&mut rng)
    })
}

/// `(start, end, customers)` triples over roughly a year, in seconds.
pub fn intervals(m: usize, seed: u64) -> Vec<(i64, i64, u64)> {
    let mut rng = seed::rng(seed);
    (0..m)
        .map(|_| {
            let start = rng.random_range(0..31_536_000i64);
            (start, start + rng.random_range(60..86_400), rng.random_range(1..500))
        })
        .collect()
}

/// Smooth target over the blob features, positive minutes.
pub fn targets(x: &Array2<f64>) -> Vec<f64> {
    x.rows().into_iter().map(|r| 60.0 + 40.0 * r[0] + 25.0 * r[1].sin()).collect()
}
