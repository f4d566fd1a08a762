//! Lloyd's k-means with k-means++ seeding and restarts.

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy)]
pub struct KMeansConfig {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once the summed squared centroid shift falls to `tol` times the mean column variance.
    pub tol: f64,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { restarts: 20, max_iter: 300, tol: 1e-4, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

fn flat_sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_flat(row: &[f64], centroids: &[f64], n: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cent) in centroids.chunks_exact(n).enumerate() {
        let d = flat_sq_dist(row, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn plus_plus(x: ArrayView2<f64>, k: usize, rng: &mut seed::Rng) -> Array2<f64> {
    let m = x.nrows();
    let mut centroids = Array2::<f64>::zeros((k, x.ncols()));
    centroids.row_mut(0).assign(&x.row(rng.random_range(0..m)));
    let x = x.as_standard_layout();
    let data = x.as_slice().expect("standard layout");
    let n = x.ncols();
    let mut d2: Vec<f64> = data.chunks_exact(n).map(|r| flat_sq_dist(r, centroids.row(0).as_slice().unwrap())).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        centroids.row_mut(c).assign(&x.row(pick));
        let cent = centroids.row(c);
        let cent = cent.as_slice().unwrap();
        for (d, r) in d2.iter_mut().zip(data.chunks_exact(n)) {
            *d = d.min(flat_sq_dist(r, cent));
        }
    }
    centroids
}

fn lloyd(x: ArrayView2<f64>, centroids: Array2<f64>, max_iter: usize, shift_tol: f64) -> KMeansResult {
    let (m, n) = x.dim();
    let k = centroids.nrows();
    let x = x.as_standard_layout();
    let data = x.as_slice().expect("standard layout");
    let row = |i: usize| &data[i * n..(i + 1) * n];
    let mut cent: Vec<f64> = centroids.iter().copied().collect();
    let mut assignments = vec![usize::MAX; m];
    let mut nearest_all = vec![(0usize, 0.0f64); m];
    let mut iterations = 0;
    loop {
        nearest_all.par_iter_mut().enumerate().for_each(|(i, slot)| *slot = nearest_flat(row(i), &cent, n));
        let changed = nearest_all.iter().zip(&assignments).any(|(a, &b)| a.0 != b);
        for (slot, (c, _)) in assignments.iter_mut().zip(&nearest_all) {
            *slot = *c;
        }
        let mut sums = vec![0.0; k * n];
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            for (s, v) in sums[c * n..(c + 1) * n].iter_mut().zip(row(i)) {
                *s += v;
            }
            counts[c] += 1;
        }
        // An empty cluster takes the point farthest from its current centroid.
        for c in 0..k {
            if counts[c] == 0 {
                let (far, _) = nearest_all
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| counts[assignments[*i]] > 1)
                    .fold((usize::MAX, -1.0), |acc, (i, &(_, d))| if d > acc.1 { (i, d) } else { acc });
                if far == usize::MAX {
                    continue;
                }
                let old = assignments[far];
                for (s, v) in sums[old * n..(old + 1) * n].iter_mut().zip(row(far)) {
                    *s -= v;
                }
                counts[old] -= 1;
                sums[c * n..(c + 1) * n].copy_from_slice(row(far));
                counts[c] = 1;
                assignments[far] = c;
            }
        }
        let mut shift = 0.0;
        for c in 0..k {
            if counts[c] > 0 {
                let count = counts[c] as f64;
                let mut d = 0.0;
                for (old, s) in cent[c * n..(c + 1) * n].iter_mut().zip(&sums[c * n..(c + 1) * n]) {
                    let mean = s / count;
                    d += (mean - *old) * (mean - *old);
                    *old = mean;
                }
                shift += d;
            }
        }
        iterations += 1;
        if !changed || shift <= shift_tol || iterations >= max_iter {
            break;
        }
    }
    let inertia = assignments.iter().enumerate().map(|(i, &c)| flat_sq_dist(row(i), &cent[c * n..(c + 1) * n])).sum();
    let centroids = Array2::from_shape_vec((k, n), cent).expect("k x n centroids");
    KMeansResult { assignments, centroids, inertia, iterations }
}

/// Best-inertia result over `cfg.restarts` seeded runs; ties keep the earliest restart.
pub fn kmeans(x: ArrayView2<f64>, k: usize, cfg: &KMeansConfig) -> Result<KMeansResult> {
    let m = x.nrows();
    if k == 0 || k > m {
        return Err(Error::InvalidInput(format!("k-means needs 1 <= k <= m, got k={k}, m={m}")));
    }
    let restarts = cfg.restarts.max(1);
    let mean_var = x.var_axis(ndarray::Axis(0), 0.0).mean().unwrap_or(0.0);
    let shift_tol = cfg.tol.max(0.0) * mean_var;
    let runs: Vec<KMeansResult> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = seed::derived_rng(cfg.seed, &format!("kmeans-restart-{r}"));
            lloyd(x, plus_plus(x, k, &mut rng), cfg.max_iter, shift_tol)
        })
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separates_two_groups() {
        let x = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [5.0, 5.0], [5.1, 5.0], [5.0, 5.1]];
        let r = kmeans(x.view(), 2, &KMeansConfig::default()).unwrap();
        assert_eq!(r.assignments[0], r.assignments[1]);
        assert_eq!(r.assignments[0], r.assignments[2]);
        assert_eq!(r.assignments[3], r.assignments[5]);
        assert_ne!(r.assignments[0], r.assignments[3]);
        assert!((r.inertia - 24.0 / 900.0).abs() < 1e-12);
    }

    #[test]
    fn every_cluster_non_empty_with_duplicates() {
        let x = array![[1.0], [1.0], [1.0], [1.0], [2.0]];
        let r = kmeans(x.view(), 3, &KMeansConfig::default()).unwrap();
        for c in 0..3 {
            assert!(r.assignments.contains(&c));
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let x = Array2::from_shape_fn((80, 2), |(i, j)| ((i * 7 + j * 13) % 19) as f64);
        let cfg = KMeansConfig { seed: 9, ..Default::default() };
        let a = kmeans(x.view(), 4, &cfg).unwrap();
        let b = kmeans(x.view(), 4, &cfg).unwrap();
        assert_eq!(a.assignments, b.assignments);
    }
}
