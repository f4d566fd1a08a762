//! Cluster validity: Davies–Bouldin index and adjusted Rand index.

use ndarray::{Array2, ArrayView2};

use super::dictionary::sq_dist;
use crate::error::{Error, Result};

/// Davies–Bouldin index of `assignments` over the rows of `x`. Scatter is the
/// mean Euclidean distance to the centroid; lower is better.
pub fn davies_bouldin(x: ArrayView2<f64>, assignments: &[usize], k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidInput("Davies-Bouldin needs at least two clusters".into()));
    }
    if assignments.len() != x.nrows() {
        return Err(Error::InvalidInput("one assignment per row required".into()));
    }
    let n = x.ncols();
    let mut centroids = Array2::<f64>::zeros((k, n));
    let mut counts = vec![0usize; k];
    for (row, &c) in x.rows().into_iter().zip(assignments) {
        if c >= k {
            return Err(Error::InvalidInput(format!("cluster id {c} out of range for k={k}")));
        }
        let mut cent = centroids.row_mut(c);
        cent += &row;
        counts[c] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::InvalidInput(format!("cluster {c} is empty")));
    }
    for (mut cent, &count) in centroids.rows_mut().into_iter().zip(&counts) {
        cent /= count as f64;
    }
    let mut scatter = vec![0.0; k];
    for (row, &c) in x.rows().into_iter().zip(assignments) {
        scatter[c] += sq_dist(row, centroids.row(c)).sqrt();
    }
    for (s, &count) in scatter.iter_mut().zip(&counts) {
        *s /= count as f64;
    }
    let mut total = 0.0;
    for i in 0..k {
        let mut worst = 0.0f64;
        for j in 0..k {
            if i == j {
                continue;
            }
            let sep = sq_dist(centroids.row(i), centroids.row(j)).sqrt();
            let ratio = if sep > 0.0 {
                (scatter[i] + scatter[j]) / sep
            } else if scatter[i] + scatter[j] > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            worst = worst.max(ratio);
        }
        total += worst;
    }
    Ok(total / k as f64)
}

/// Adjusted Rand index between two labelings of the same samples.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let pairs = |c: u64| (c * c.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().flatten().map(|&c| pairs(c)).sum();
    let rows: f64 = table.iter().map(|r| pairs(r.iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| pairs(table.iter().map(|r| r[j]).sum())).sum();
    let total = pairs(n as u64);
    let expected = if total > 0.0 { rows * cols / total } else { 0.0 };
    let max = 0.5 * (rows + cols);
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
