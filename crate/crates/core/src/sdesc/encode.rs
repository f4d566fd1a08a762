//! Kernel-regression sparse coding against a fixed dictionary.

use log::warn;
use ndarray::{Array2, ArrayView2};
use ndarray::parallel::prelude::*;
use serde::{Deserialize, Serialize};

use super::dictionary::{sq_dist, Dictionary};
use crate::error::{Error, Result};

/// Gaussian kernel bandwidth for coding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median over samples of the distance to the nearest atom.
    Median,
    /// Median over samples of the distance to the farthest kept atom.
    MedianKept,
    /// Per sample: distance to its `beta`-th nearest atom.
    SelfTuning { beta: usize },
}

/// Row-stochastic codes in compressed-row form: row `i` keeps at most
/// `s_nonzeros` atoms, non-negative, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseCodes {
    pub p: usize,
    pub offsets: Vec<usize>,
    pub atoms: Vec<u32>,
    pub weights: Vec<f64>,
    /// Rows that fell back to uniform weights.
    pub fallback_rows: usize,
}

impl SparseCodes {
    pub fn nrows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.atoms[r.clone()].iter().map(|&a| a as usize).zip(self.weights[r].iter().copied())
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows(), self.p));
        for i in 0..self.nrows() {
            for (j, w) in self.row(i) {
                out[[i, j]] = w;
            }
        }
        out
    }

    pub fn from_dense(dense: ArrayView2<f64>) -> Result<Self> {
        let mut codes = SparseCodes { p: dense.ncols(), offsets: vec![0], atoms: Vec::new(), weights: Vec::new(), fallback_rows: 0 };
        for row in dense.rows() {
            let sum: f64 = row.sum();
            if row.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput("code rows must be non-negative and sum to one".into()));
            }
            for (j, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    codes.atoms.push(j as u32);
                    codes.weights.push(w);
                }
            }
            codes.offsets.push(codes.atoms.len());
        }
        Ok(codes)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    let mid = v.len() / 2;
    *v.select_nth_unstable_by(mid, f64::total_cmp).1
}

/// Distance-sorted `(sq_dist, atom)` pairs for one sample.
fn nearest_atoms(row: ndarray::ArrayView1<f64>, dict: &Dictionary) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> =
        dict.atoms.rows().into_iter().enumerate().map(|(j, a)| (sq_dist(row, a), j)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d
}

/// Kernel weights below this fraction of the row's largest are dropped; they
/// carry no usable information and only add exponent-scale noise downstream.
const NEGLIGIBLE: f64 = 1e-12;

/// Codes every sample against the dictionary: Gaussian kernel to all atoms,
/// keep the `s_nonzeros` largest (minus negligible ones), renormalize over
/// the kept atoms.
pub fn encode(x: ArrayView2<f64>, dict: &Dictionary, s_nonzeros: usize, bandwidth: Bandwidth) -> Result<SparseCodes> {
    let p = dict.p();
    if x.ncols() != dict.atoms.ncols() {
        return Err(Error::InvalidInput(format!(
            "samples have {} features but atoms have {}",
            x.ncols(),
            dict.atoms.ncols()
        )));
    }
    if s_nonzeros == 0 {
        return Err(Error::Config("s_nonzeros must be at least 1".into()));
    }
    let s = s_nonzeros.min(p);
    let sorted: Vec<Vec<(f64, usize)>> =
        x.axis_iter(ndarray::Axis(0)).into_par_iter().map(|row| nearest_atoms(row, dict)).collect();

    let global_sigma = match bandwidth {
        Bandwidth::Fixed(sigma) if sigma > 0.0 => sigma,
        Bandwidth::Fixed(sigma) => return Err(Error::Config(format!("kernel bandwidth must be positive, got {sigma}"))),
        _ => {
            let rank = if bandwidth == Bandwidth::MedianKept { s - 1 } else { 0 };
            let dists: Vec<f64> = sorted.iter().map(|d| d[rank].0.sqrt()).collect();
            let med = median(dists.clone());
            if med > 0.0 {
                med
            } else {
                let positive: Vec<f64> = dists.into_iter().filter(|&v| v > 0.0).collect();
                if positive.is_empty() { 1.0 } else { positive.iter().sum::<f64>() / positive.len() as f64 }
            }
        }
    };

    let mut codes = SparseCodes { p, offsets: Vec::with_capacity(x.nrows() + 1), atoms: Vec::new(), weights: Vec::new(), fallback_rows: 0 };
    codes.offsets.push(0);
    for d in &sorted {
        let sigma = match bandwidth {
            Bandwidth::SelfTuning { beta } => {
                let b = d[beta.clamp(1, p) - 1].0.sqrt();
                if b > 0.0 { b } else { global_sigma }
            }
            _ => global_sigma,
        };
        let kept = &d[..s];
        // Shifting by the nearest distance leaves the normalized weights unchanged.
        let shift = kept[0].0;
        let mut w: Vec<f64> = kept
            .iter()
            .map(|(d2, _)| (-(d2 - shift) / (2.0 * sigma * sigma)).exp())
            .map(|v| if v < NEGLIGIBLE { 0.0 } else { v })
            .collect();
        let mut total: f64 = w.iter().sum();
        if !(total.is_finite() && total > 0.0) {
            w.iter_mut().for_each(|v| *v = 1.0);
            total = s as f64;
            codes.fallback_rows += 1;
        }
        for (&(_, j), v) in kept.iter().zip(&w) {
            if *v == 0.0 {
                continue;
            }
            codes.atoms.push(j as u32);
            codes.weights.push(v / total);
        }
        codes.offsets.push(codes.atoms.len());
    }
    if codes.fallback_rows > 0 {
        warn!("{} samples had no usable kernel weight; coded uniformly over their nearest atoms", codes.fallback_rows);
    }
    Ok(codes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dict() -> Dictionary {
        Dictionary::from_atoms(array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [3.0, 3.0]]).unwrap()
    }

    #[test]
    fn sample_on_an_atom_peaks_there() {
        let x = array![[1.0, 0.0], [0.0, 2.0]];
        let codes = encode(x.view(), &dict(), 3, Bandwidth::Fixed(0.7)).unwrap();
        let dense = codes.to_dense();
        for (i, atom) in [(0usize, 1usize), (1, 2)] {
            let row = dense.row(i);
            let argmax = (0..4).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, atom);
        }
    }

    #[test]
    fn rows_are_stochastic_and_sparse() {
        let x = Array2::from_shape_fn((50, 2), |(i, j)| ((i * 13 + j * 7) % 17) as f64 / 5.0);
        for bw in [Bandwidth::Median, Bandwidth::MedianKept, Bandwidth::Fixed(0.3), Bandwidth::SelfTuning { beta: 2 }] {
            let codes = encode(x.view(), &dict(), 2, bw).unwrap();
            for i in 0..codes.nrows() {
                let row: Vec<(usize, f64)> = codes.row(i).collect();
                assert!(row.len() <= 2);
                assert!(row.iter().all(|&(_, w)| w >= 0.0));
                assert!((row.iter().map(|r| r.1).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_atom_codes_are_one() {
        let d = Dictionary::from_atoms(array![[0.5, 0.5]]).unwrap();
        let x = array![[0.0, 0.0], [9.0, -4.0]];
        let codes = encode(x.view(), &d, 5, Bandwidth::Median).unwrap();
        assert_eq!(codes.to_dense(), array![[1.0], [1.0]]);
    }

    #[test]
    fn far_samples_keep_their_nearest_atoms() {
        // Raw kernel values underflow here; the shifted form still ranks atoms.
        let x = array![[1.0e4, 0.0]];
        let codes = encode(x.view(), &dict(), 2, Bandwidth::Fixed(0.01)).unwrap();
        let row: Vec<(usize, f64)> = codes.row(0).collect();
        assert_eq!(row[0], (3, 1.0));
        assert_eq!(codes.fallback_rows, 0);
    }

    #[test]
    fn dense_round_trip_and_dimension_check() {
        let codes = encode(array![[0.2, 0.1]].view(), &dict(), 3, Bandwidth::Median).unwrap();
        assert_eq!(SparseCodes::from_dense(codes.to_dense().view()).unwrap().to_dense(), codes.to_dense());
        assert!(encode(array![[0.2, 0.1, 0.0]].view(), &dict(), 3, Bandwidth::Median).is_err());
    }
}
