//! Spectral embeddings.
//!
//! The reference path builds the dense self-tuning adjacency over all samples
//! and eigendecomposes `L = D^{-1/2} W D^{-1/2}`. Cluster structure of this
//! normalized similarity lives in its largest eigenvalues (the smallest of
//! `I - L`), so both paths return the top-k eigenvectors.
//!
//! The landmark path never forms the `m × m` matrix. With codes `Z` (`m × p`,
//! row-stochastic) and atom degrees `d_j = Σ_i Z_ij`, the implicit similarity
//! is `Ẑᵀ Ẑ` where `Ẑ = diag(d)^{-1/2} Zᵀ`. Its eigenvectors are the right
//! singular vectors of `Ẑ`, recovered from the `p × p` Gram matrix `Ẑ Ẑᵀ` and
//! one pass over the codes: `O(p³ + p² m)`.

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use super::dictionary::sq_dist;
use super::encode::SparseCodes;
use crate::error::{Error, Result};

/// Relative size below which an eigenvalue counts as numerically zero.
const RANK_TOL: f64 = 1e-10;
/// Relative eigengap below which the k-th and (k+1)-th eigenvalues count as equal.
const DEGENERACY_TOL: f64 = 1e-9;

/// Dense self-tuning Gaussian adjacency over the rows of `points`:
/// `W_ij = exp(-|z_i - z_j|² / (α_i α_j))`, `α_i` the distance to the
/// `beta`-th nearest other row, zero diagonal. A zero scale (at least
/// `beta` exact duplicates) is replaced by the smallest positive one.
pub fn adjacency_reference(points: ArrayView2<f64>, beta: usize) -> Result<Array2<f64>> {
    let m = points.nrows();
    if beta == 0 || m < beta + 1 {
        return Err(Error::InvalidInput(format!("self-tuning adjacency needs beta >= 1 and m >= beta + 1 (m={m}, beta={beta})")));
    }
    let mut d2 = Array2::<f64>::zeros((m, m));
    d2.axis_iter_mut(ndarray::Axis(0)).into_par_iter().enumerate().for_each(|(i, mut row)| {
        for j in 0..m {
            row[j] = sq_dist(points.row(i), points.row(j));
        }
    });
    let mut alpha: Vec<f64> = (0..m)
        .map(|i| {
            let mut r: Vec<f64> = (0..m).filter(|&j| j != i).map(|j| d2[[i, j]]).collect();
            r.select_nth_unstable_by(beta - 1, f64::total_cmp).1.sqrt()
        })
        .collect();
    let smallest_positive = alpha.iter().copied().filter(|&a| a > 0.0).fold(f64::INFINITY, f64::min);
    let zeros = alpha.iter().filter(|&&a| a == 0.0).count();
    if zeros > 0 {
        let fill = if smallest_positive.is_finite() { smallest_positive } else { 1.0 };
        warn!("{zeros} samples have a zero local scale (duplicates); using {fill:e}");
        alpha.iter_mut().filter(|a| **a == 0.0).for_each(|a| *a = fill);
    }
    let mut w = d2;
    for i in 0..m {
        for j in 0..m {
            w[[i, j]] = if i == j { 0.0 } else { (-w[[i, j]] / (alpha[i] * alpha[j])).exp() };
        }
    }
    Ok(w)
}

/// Leading eigenpairs, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub values: Vec<f64>,
    /// `m × r` sample-side eigenvectors, columns aligned with `values`.
    pub vectors: Array2<f64>,
}

impl SpectralBasis {
    pub fn max_k(&self) -> usize {
        self.values.len()
    }

    /// First `k` columns, optionally with rows scaled to unit length. Fails
    /// when eigenvalue `k` is numerically zero or equal to eigenvalue `k + 1`
    /// (the cut would split a repeated eigenspace arbitrarily).
    pub fn embedding(&self, k: usize, normalize_rows: bool) -> Result<Array2<f64>> {
        self.embedding_checked(k, normalize_rows, true)
    }

    /// As [`embedding`](Self::embedding), optionally accepting a cut through a
    /// repeated eigenvalue.
    pub fn embedding_checked(&self, k: usize, normalize_rows: bool, require_gap: bool) -> Result<Array2<f64>> {
        if k == 0 || k > self.max_k() {
            return Err(Error::InvalidInput(format!("cannot embed with k={k}; {} usable eigenvectors", self.max_k())));
        }
        let top = self.values[0].abs().max(f64::MIN_POSITIVE);
        if self.values[k - 1] <= RANK_TOL * top {
            return Err(Error::Numerical(format!(
                "rank deficiency: eigenvalue {} of {k} is numerically zero; use a smaller k or more atoms",
                k
            )));
        }
        if require_gap && k < self.max_k() && self.values[k - 1] - self.values[k] <= DEGENERACY_TOL * top {
            return Err(Error::Numerical(format!(
                "eigenvalues {k} and {} coincide, so a {k}-dimensional embedding is not unique",
                k + 1
            )));
        }
        let mut e = self.vectors.slice(ndarray::s![.., ..k]).to_owned();
        if normalize_rows {
            normalize(&mut e);
        }
        Ok(e)
    }
}

pub(crate) fn normalize(e: &mut Array2<f64>) {
    for mut row in e.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row /= norm;
        }
    }
}

fn to_nalgebra(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Sorts eigenpairs descending and fixes each vector's sign so its
/// largest-magnitude entry is positive.
fn sorted_eigen(eig: SymmetricEigen<f64, nalgebra::Dyn>, keep: usize) -> (Vec<f64>, DMatrix<f64>) {
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    order.truncate(keep);
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, order.len());
    for (c, &i) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        let pivot = col.iter().copied().fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        vecs.set_column(c, &(col * sign));
    }
    (values, vecs)
}

/// Normalized similarity `D^{-1/2} W D^{-1/2}`; errors on a zero-degree vertex.
pub fn normalized_similarity(w: ArrayView2<f64>) -> Result<Array2<f64>> {
    let m = w.nrows();
    if w.ncols() != m {
        return Err(Error::InvalidInput("adjacency must be square".into()));
    }
    let degree: Vec<f64> = w.rows().into_iter().map(|r| r.sum()).collect();
    if let Some(i) = degree.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Numerical(format!("vertex {i} has zero degree; the graph Laplacian is undefined")));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| 1.0 / d.sqrt()).collect();
    Ok(Array2::from_shape_fn((m, m), |(i, j)| w[[i, j]] * inv_sqrt[i] * inv_sqrt[j]))
}

/// Top-`k_max` eigenvectors of the normalized similarity of a dense `W`.
pub fn reference_basis(w: ArrayView2<f64>, k_max: usize) -> Result<SpectralBasis> {
    let m = w.nrows();
    if k_max == 0 || k_max > m {
        return Err(Error::InvalidInput(format!("k={k_max} is outside 1..={m}")));
    }
    let l = normalized_similarity(w)?;
    let eig = SymmetricEigen::try_new(to_nalgebra(l.view()), 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let (values, vecs) = sorted_eigen(eig, k_max);
    Ok(SpectralBasis { values, vectors: Array2::from_shape_fn((m, k_max), |(i, j)| vecs[(i, j)]) })
}

pub fn spectral_embed_reference(w: ArrayView2<f64>, k: usize, normalize_rows: bool) -> Result<Array2<f64>> {
    reference_basis(w, (k + 1).min(w.nrows()))?.embedding(k, normalize_rows)
}

/// Degree-normalized codes `Ẑ` as `(atom, weight)` rows, plus the atom degrees.
fn normalized_codes(codes: &SparseCodes) -> (Vec<f64>, Vec<f64>) {
    let mut degree = vec![0.0; codes.p];
    for (&a, &w) in codes.atoms.iter().zip(&codes.weights) {
        degree[a as usize] += w;
    }
    let scaled = codes
        .atoms
        .iter()
        .zip(&codes.weights)
        .map(|(&a, &w)| w / degree[a as usize].sqrt())
        .collect();
    (degree, scaled)
}

/// Top-`k_max` right singular vectors of `Ẑ`, i.e. eigenvectors of `Ẑᵀ Ẑ`.
pub fn landmark_basis(codes: &SparseCodes, k_max: usize) -> Result<SpectralBasis> {
    let p = codes.p;
    let m = codes.nrows();
    if k_max == 0 || k_max > p {
        return Err(Error::InvalidInput(format!(
            "k={k_max} exceeds the {p} dictionary atoms; use a smaller k or a larger dictionary"
        )));
    }
    let (_, scaled) = normalized_codes(codes);
    let mut gram = DMatrix::<f64>::zeros(p, p);
    for i in 0..m {
        let r = codes.offsets[i]..codes.offsets[i + 1];
        let atoms = &codes.atoms[r.clone()];
        let vals = &scaled[r];
        for (x, &a) in atoms.iter().enumerate() {
            for (y, &b) in atoms.iter().enumerate() {
                gram[(a as usize, b as usize)] += vals[x] * vals[y];
            }
        }
    }
    let eig = SymmetricEigen::try_new(gram, 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("symmetric eigensolver did not converge".into()))?;
    let (values, left) = sorted_eigen(eig, k_max);
    let top = values[0].max(f64::MIN_POSITIVE);
    let usable = values.iter().take_while(|&&v| v > RANK_TOL * top).count();
    if usable == 0 {
        return Err(Error::Numerical("code matrix is numerically zero".into()));
    }
    let inv_sigma: Vec<f64> = values[..usable].iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut vectors = Array2::<f64>::zeros((m, k_max));
    vectors.axis_iter_mut(ndarray::Axis(0)).into_par_iter().enumerate().for_each(|(i, mut out)| {
        for idx in codes.offsets[i]..codes.offsets[i + 1] {
            let a = codes.atoms[idx] as usize;
            for l in 0..usable {
                out[l] += scaled[idx] * left[(a, l)] * inv_sigma[l];
            }
        }
    });
    // Eigenvalues of Ẑᵀ Ẑ equal those of the Gram matrix; columns past `usable`
    // stay zero and are rejected by `embedding`.
    Ok(SpectralBasis { values, vectors })
}

pub fn spectral_embed_landmark(codes: &SparseCodes, k: usize, normalize_rows: bool) -> Result<Array2<f64>> {
    landmark_basis(codes, (k + 1).min(codes.p).max(k))?.embedding(k, normalize_rows)
}

/// Dense `Ẑᵀ Ẑ` (`m × m`); only for verification on small inputs.
pub fn landmark_similarity_dense(codes: &SparseCodes) -> Array2<f64> {
    let (_, scaled) = normalized_codes(codes);
    let m = codes.nrows();
    let mut zhat = Array2::<f64>::zeros((codes.p, m));
    for i in 0..m {
        for idx in codes.offsets[i]..codes.offsets[i + 1] {
            zhat[[codes.atoms[idx] as usize, i]] = scaled[idx];
        }
    }
    zhat.t().dot(&zhat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn duplicate_points_have_unit_weight() {
        let z = array![[0.0, 0.0], [0.0, 0.0], [1.0, 1.0], [1.2, 0.9]];
        let w = adjacency_reference(z.view(), 1).unwrap();
        assert_eq!(w[[0, 1]], 1.0);
        assert_eq!(w, w.t());
        assert!(w.diag().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn three_points_on_a_line() {
        let z = array![[0.0], [1.0], [100.0]];
        let w = adjacency_reference(z.view(), 1).unwrap();
        // alpha = [1, 1, 99]: W01 = e^-1, W12 = e^-(99²/99) = e^-99
        assert!((w[[0, 1]] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((w[[1, 2]] - (-99.0f64).exp()).abs() < 1e-50);
        assert!(w[[0, 1]] > 1e30 * w[[1, 2]]);
    }

    fn block_diagonal() -> Array2<f64> {
        let mut w = Array2::<f64>::zeros((6, 6));
        for (i, j, v) in [(0, 1, 0.9), (0, 2, 0.5), (1, 2, 0.7), (3, 4, 0.8), (3, 5, 0.3), (4, 5, 0.6)] {
            w[[i, j]] = v;
            w[[j, i]] = v;
        }
        w
    }

    #[test]
    fn disconnected_blocks_embed_to_constant_rows() {
        let e = spectral_embed_reference(block_diagonal().view(), 2, true).unwrap();
        for block in [[0, 1, 2], [3, 4, 5]] {
            for c in 0..2 {
                let vals: Vec<f64> = block.iter().map(|&i| e[[i, c]]).collect();
                let mean = vals.iter().sum::<f64>() / 3.0;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
                assert!(var < 1e-8, "within-block variance {var}");
            }
        }
    }

    #[test]
    fn spectrum_bounds_and_stationary_vector() {
        let z = Array2::from_shape_fn((30, 2), |(i, j)| if j == 0 { i as f64 * 0.2 } else { (i as f64 * 1.3).sin() * 0.1 });
        let w = adjacency_reference(z.view(), 3).unwrap();
        let basis = reference_basis(w.view(), 30).unwrap();
        assert!(basis.values.iter().all(|&v| (-1.0 - 1e-8..=1.0 + 1e-8).contains(&v)));
        assert!((basis.values[0] - 1.0).abs() < 1e-10);
        let degree: Vec<f64> = w.rows().into_iter().map(|r| r.sum()).collect();
        let norm = degree.iter().sum::<f64>().sqrt();
        for (i, d) in degree.iter().enumerate() {
            assert!((basis.vectors[[i, 0]] - d.sqrt() / norm).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_degree_is_an_error() {
        let mut w = block_diagonal();
        w.row_mut(5).fill(0.0);
        w.column_mut(5).fill(0.0);
        assert!(matches!(reference_basis(w.view(), 2), Err(Error::Numerical(_))));
        assert!(reference_basis(block_diagonal().view(), 7).is_err());
    }

    #[test]
    fn exact_rank_landmark_reconstructs_similarity() {
        let dense = array![[0.7, 0.3, 0.0], [0.2, 0.5, 0.3], [0.0, 0.1, 0.9], [1.0, 0.0, 0.0], [0.25, 0.25, 0.5]];
        let codes = SparseCodes::from_dense(dense.view()).unwrap();
        let basis = landmark_basis(&codes, 3).unwrap();
        let mut recon = Array2::<f64>::zeros((5, 5));
        for l in 0..3 {
            let v = basis.vectors.column(l);
            for i in 0..5 {
                for j in 0..5 {
                    recon[[i, j]] += basis.values[l] * v[i] * v[j];
                }
            }
        }
        let exact = landmark_similarity_dense(&codes);
        assert!(recon.iter().zip(exact.iter()).all(|(a, b)| (a - b).abs() < 1e-8));
        assert!(landmark_basis(&codes, 4).is_err());
    }

    #[test]
    fn rank_deficient_codes_are_rejected() {
        let dense = array![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let codes = SparseCodes::from_dense(dense.view()).unwrap();
        let basis = landmark_basis(&codes, 3).unwrap();
        assert!(basis.embedding(2, true).is_ok());
        assert!(matches!(basis.embedding(3, true), Err(Error::Numerical(_))));
    }
}
