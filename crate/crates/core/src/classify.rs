//! Exact t-SNE map of the clustered training rows and nearest-member routing
//! of unseen outages.

use std::io::Write;

use log::{debug, info};
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdesc::dictionary::sq_dist;
use crate::seed;

pub const PERPLEXITY_LOG_TOL: f64 = 1e-4;
/// Absolute tolerance on the achieved perplexity itself.
pub const PERPLEXITY_TOL: f64 = 1e-3;
pub const MAX_BISECTION_STEPS: usize = 64;
const MIN_GAIN: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub n_iter: usize,
    pub learning_rate: f64,
    pub momentum_early: f64,
    pub momentum_late: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    /// Training rows above this count are subsampled per cluster before fitting.
    pub max_points: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            n_iter: 1000,
            learning_rate: 200.0,
            momentum_early: 0.5,
            momentum_late: 0.8,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            max_points: 1500,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.perplexity > 0.0) {
            return bad("perplexity must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum_early) || !(0.0..1.0).contains(&self.momentum_late) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.early_exaggeration >= 1.0) {
            return bad("early exaggeration must be at least 1");
        }
        if self.max_points < 10 {
            return bad("max_points must be at least 10");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneMap {
    pub points: Array2<f64>,
    pub labels: Vec<usize>,
    pub kl_trace: Vec<f64>,
    pub config: TsneConfig,
    /// Standardized feature rows behind each map point.
    pub high_dim_ref: Array2<f64>,
    /// Fitted Gaussian bandwidth of each map point.
    pub deltas: Vec<f64>,
    /// Achieved perplexity of each point's conditional distribution.
    pub perplexities: Vec<f64>,
}

/// Conditional row `p(·|i)` at precision `beta`; returns its entropy in nats.
fn conditional_row(d2: ArrayView1<f64>, i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let d_min = d2.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d).fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, &d) in d2.iter().enumerate() {
        out[j] = if j == i { 0.0 } else { (-beta * (d - d_min)).exp() };
        sum += out[j];
    }
    let mut weighted = 0.0;
    for (j, &d) in d2.iter().enumerate() {
        out[j] /= sum;
        weighted += out[j] * (d - d_min);
    }
    sum.ln() + beta * weighted
}

/// Precision `beta_i = 1/(2δ_i²)` matching `ln(perplexity)` by bisection.
fn calibrate_row(d2: ArrayView1<f64>, i: usize, perplexity: f64, out: &mut [f64]) -> (f64, f64) {
    let target = perplexity.ln();
    let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
    let mut beta = 1.0;
    let mut h = conditional_row(d2, i, beta, out);
    for _ in 0..MAX_BISECTION_STEPS {
        if (h - target).abs() < PERPLEXITY_LOG_TOL && (h.exp() - perplexity).abs() < 0.5 * PERPLEXITY_TOL {
            break;
        }
        if h > target {
            lo = beta;
            beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
        } else {
            hi = beta;
            beta = (beta + lo) / 2.0;
        }
        h = conditional_row(d2, i, beta, out);
    }
    (beta, h.exp())
}

pub fn pairwise_sq_distances(x: ArrayView2<f64>) -> Array2<f64> {
    let m = x.nrows();
    let mut d = Array2::zeros((m, m));
    d.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(i, mut row)| {
        for j in 0..m {
            row[j] = sq_dist(x.row(i), x.row(j));
        }
    });
    d
}

pub struct JointProbabilities {
    pub p: Array2<f64>,
    pub betas: Vec<f64>,
    pub perplexities: Vec<f64>,
}

/// Symmetrized joints `p_ij = (p(j|i) + p(i|j)) / 2m`.
pub fn joint_probabilities(x: ArrayView2<f64>, perplexity: f64) -> Result<JointProbabilities> {
    let m = x.nrows();
    if m < 10 {
        return Err(Error::InvalidInput(format!("t-SNE needs at least 10 rows, got {m}")));
    }
    if perplexity >= m as f64 / 3.0 {
        return Err(Error::Config(format!("perplexity {perplexity} is infeasible for {m} rows (must be < m/3)")));
    }
    let d2 = pairwise_sq_distances(x);
    let mut cond = Array2::zeros((m, m));
    let calib: Vec<(f64, f64)> = cond
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .map(|(i, mut row)| calibrate_row(d2.row(i), i, perplexity, row.as_slice_mut().expect("standard layout")))
        .collect();
    let mut p = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            p[[i, j]] = (cond[[i, j]] + cond[[j, i]]) / (2.0 * m as f64);
        }
    }
    Ok(JointProbabilities {
        p,
        betas: calib.iter().map(|c| c.0).collect(),
        perplexities: calib.iter().map(|c| c.1).collect(),
    })
}

/// KL(P‖Q) in nats and its gradient `4 Σ_j (p_ij - q_ij)(y_i - y_j)(1 + |y_i - y_j|²)⁻¹`.
pub fn kl_and_gradient(p: ArrayView2<f64>, y: ArrayView2<f64>) -> (f64, Array2<f64>) {
    kl_and_scaled_gradient(p, 1.0, y)
}

/// KL of the unscaled `P`, gradient of the objective with `P` scaled by
/// `exaggeration`. `P` is symmetric, so each unordered pair is visited once.
fn kl_and_scaled_gradient(p: ArrayView2<f64>, exaggeration: f64, y: ArrayView2<f64>) -> (f64, Array2<f64>) {
    let m = y.nrows();
    let dims = y.ncols();
    let yv: Vec<f64> = y.iter().copied().collect();
    let p = p.as_standard_layout();
    // Upper triangle of the Student-t kernel, row by row.
    let mut num = Array2::<f64>::zeros((m, m));
    num.axis_iter_mut(Axis(0)).into_par_iter().enumerate().for_each(|(i, mut row)| {
        let row = row.as_slice_mut().expect("standard layout");
        let yi = &yv[i * dims..(i + 1) * dims];
        for j in i + 1..m {
            let yj = &yv[j * dims..(j + 1) * dims];
            let d: f64 = yi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
            row[j] = 1.0 / (1.0 + d);
        }
    });
    let z = 2.0 * num.sum();
    let zero = || (0.0, vec![0.0; m * dims]);
    let (kl, g) = (0..m)
        .into_par_iter()
        .fold(zero, |(mut kl, mut g), i| {
            let num_i = num.row(i);
            let num_i = num_i.as_slice().expect("standard layout");
            let p_i = p.row(i);
            let p_i = p_i.as_slice().expect("standard layout");
            for j in i + 1..m {
                let n = num_i[j];
                let q = n / z;
                let pij = p_i[j];
                if pij > 0.0 {
                    kl += 2.0 * pij * (pij / q).ln();
                }
                let coef = 4.0 * (exaggeration * pij - q) * n;
                for d in 0..dims {
                    let diff = coef * (yv[i * dims + d] - yv[j * dims + d]);
                    g[i * dims + d] += diff;
                    g[j * dims + d] -= diff;
                }
            }
            (kl, g)
        })
        .reduce(zero, |(ka, mut ga), (kb, gb)| {
            ga.iter_mut().zip(&gb).for_each(|(a, b)| *a += b);
            (ka + kb, ga)
        });
    (kl, Array2::from_shape_vec((m, dims), g).expect("m × dims"))
}

fn subsample(labels: &[usize], max_points: usize, seed: u64) -> Vec<usize> {
    let m = labels.len();
    if m <= max_points {
        return (0..m).collect();
    }
    let mut by_label: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (i, &l) in labels.iter().enumerate() {
        by_label.entry(l).or_default().push(i);
    }
    let mut rng = seed::derived_rng(seed, "tsne-subsample");
    let mut keep = Vec::with_capacity(max_points);
    for members in by_label.values() {
        let quota = ((members.len() as f64 * max_points as f64 / m as f64).round() as usize).clamp(1, members.len());
        keep.extend(sample(&mut rng, members.len(), quota).into_iter().map(|k| members[k]));
    }
    keep.sort_unstable();
    keep
}

/// Fits the map. Rows beyond `cfg.max_points` are subsampled per label,
/// proportionally, before the exact O(m²) optimization.
pub fn fit_tsne(x: ArrayView2<f64>, labels: &[usize], cfg: &TsneConfig) -> Result<TsneMap> {
    cfg.validate()?;
    if labels.len() != x.nrows() {
        return Err(Error::InvalidInput(format!("{} labels for {} rows", labels.len(), x.nrows())));
    }
    let keep = subsample(labels, cfg.max_points, cfg.seed);
    if keep.len() < x.nrows() {
        info!("t-SNE on a {}-row per-cluster subsample of {} rows", keep.len(), x.nrows());
    }
    let xs = x.select(Axis(0), &keep);
    let labels: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
    let joint = joint_probabilities(xs.view(), cfg.perplexity)?;
    for (i, &pp) in joint.perplexities.iter().enumerate() {
        if (pp - cfg.perplexity).abs() > PERPLEXITY_TOL {
            return Err(Error::Numerical(format!(
                "perplexity calibration failed at row {i}: {pp} vs target {}",
                cfg.perplexity
            )));
        }
    }
    let m = xs.nrows();
    let mut rng = seed::derived_rng(cfg.seed, "tsne-init");
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y = Array2::from_shape_fn((m, 2), |_| normal.sample(&mut rng));
    let mut update = Array2::<f64>::zeros((m, 2));
    let mut gains = Array2::<f64>::ones((m, 2));
    let mut kl_trace = Vec::with_capacity(cfg.n_iter + 1);

    for iter in 0..cfg.n_iter {
        let early = iter < cfg.exaggeration_iters;
        let scale = if early { cfg.early_exaggeration } else { 1.0 };
        let (kl, grad) = kl_and_scaled_gradient(joint.p.view(), scale, y.view());
        if !kl.is_finite() {
            return Err(Error::Numerical(format!("t-SNE divergence became non-finite at iteration {iter}")));
        }
        kl_trace.push(kl);
        let momentum = if early { cfg.momentum_early } else { cfg.momentum_late };
        ndarray::Zip::from(&mut gains).and(&grad).and(&update).for_each(|g, &d, &u| {
            *g = if (d > 0.0) != (u > 0.0) { *g + 0.2 } else { (*g * 0.8).max(MIN_GAIN) };
        });
        update = &update * momentum - &(&gains * &grad) * cfg.learning_rate;
        y += &update;
        let mean = y.mean_axis(Axis(0)).expect("non-empty map");
        y -= &mean;
        if iter % 100 == 0 {
            debug!("t-SNE iteration {iter}: KL {kl:.5}");
        }
    }
    let kl = kl_and_gradient(joint.p.view(), y.view()).0;
    kl_trace.push(kl);
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Numerical("t-SNE map has non-finite coordinates".into()));
    }
    Ok(TsneMap {
        points: y,
        labels,
        kl_trace,
        config: cfg.clone(),
        high_dim_ref: xs,
        deltas: joint.betas.iter().map(|b| (0.5 / b).sqrt()).collect(),
        perplexities: joint.perplexities,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbedStrategy {
    /// Kernel-weighted average of map points.
    Interpolate,
    /// Refit the whole map with the row appended (slow; for verification).
    Refit,
}

impl TsneMap {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check_width(&self, x: ArrayView1<f64>) -> Result<()> {
        if x.len() != self.high_dim_ref.ncols() {
            return Err(Error::InvalidInput(format!(
                "row has {} features, the map was fitted on {}",
                x.len(),
                self.high_dim_ref.ncols()
            )));
        }
        Ok(())
    }

    /// Kernel weights of `x` over the map rows; they sum to 1.
    pub fn interpolation_weights(&self, x: ArrayView1<f64>) -> Vec<f64> {
        let d2: Vec<f64> = self.high_dim_ref.rows().into_iter().map(|r| sq_dist(r, x)).collect();
        let (nearest, d_min) =
            d2.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &d)| if d < acc.1 { (i, d) } else { acc });
        let delta = self.deltas[nearest];
        let mut w: Vec<f64> = d2.iter().map(|&d| (-(d - d_min) / (2.0 * delta * delta)).exp()).collect();
        let sum: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= sum);
        w
    }

    pub fn embed_unseen(&self, x: ArrayView1<f64>) -> Result<[f64; 2]> {
        self.check_width(x)?;
        let w = self.interpolation_weights(x);
        let mut out = [0.0; 2];
        for (wi, p) in w.iter().zip(self.points.rows()) {
            out[0] += wi * p[0];
            out[1] += wi * p[1];
        }
        Ok(out)
    }

    /// Map members per cluster id, indexed by id.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let k = self.labels.iter().max().map_or(0, |&l| l + 1);
        let mut sizes = vec![0; k];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Routes a 2-D point by nearest-member ("edge") distance.
    pub fn route_point(&self, point: [f64; 2]) -> Routing {
        route_in(self.points.view(), &self.labels, point)
    }

    pub fn route(&self, x: ArrayView1<f64>) -> Result<Routing> {
        Ok(self.route_point(self.embed_unseen(x)?))
    }

    pub fn route_with(&self, x: ArrayView1<f64>, strategy: EmbedStrategy) -> Result<Routing> {
        match strategy {
            EmbedStrategy::Interpolate => self.route(x),
            EmbedStrategy::Refit => {
                self.check_width(x)?;
                let mut rows = self.high_dim_ref.clone();
                rows.push_row(x).map_err(|e| Error::InvalidInput(e.to_string()))?;
                let mut labels = self.labels.clone();
                labels.push(usize::MAX);
                let cfg = TsneConfig { max_points: rows.nrows(), ..self.config.clone() };
                let refit = fit_tsne(rows.view(), &labels, &cfg)?;
                let m = self.labels.len();
                let point = [refit.points[[m, 0]], refit.points[[m, 1]]];
                Ok(route_in(refit.points.slice(ndarray::s![..m, ..]), &self.labels, point))
            }
        }
    }

    /// `x,y,label` rows for external plotting.
    pub fn write_plot_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["x", "y", "label"])?;
        for (p, l) in self.points.rows().into_iter().zip(&self.labels) {
            csv.write_record([p[0].to_string(), p[1].to_string(), l.to_string()])?;
        }
        csv.flush().map_err(|e| Error::io("<plot csv>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Routing {
    pub cluster: usize,
    /// Edge distance per cluster id; `inf` for ids with no map members.
    pub distances: Vec<f64>,
}

/// Nearest cluster by minimum member distance; ties go to the cluster with
/// more members, then the lower id.
pub fn route_in(points: ArrayView2<f64>, labels: &[usize], point: [f64; 2]) -> Routing {
    let k = labels.iter().filter(|&&l| l != usize::MAX).max().map_or(0, |&l| l + 1);
    let mut distances = vec![f64::INFINITY; k];
    let mut sizes = vec![0usize; k];
    for (p, &l) in points.rows().into_iter().zip(labels) {
        if l == usize::MAX {
            continue;
        }
        let d = ((p[0] - point[0]).powi(2) + (p[1] - point[1]).powi(2)).sqrt();
        distances[l] = distances[l].min(d);
        sizes[l] += 1;
    }
    let mut best = 0;
    for c in 1..k {
        if distances[c] < distances[best] || (distances[c] == distances[best] && sizes[c] > sizes[best]) {
            best = c;
        }
    }
    Routing { cluster: best, distances }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn blobs(per: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let centers = [[0.0, 0.0, 0.0], [5.0, 0.0, 0.0], [0.0, 5.0, 0.0]];
        let mut rng = seed::rng(seed);
        let n = Normal::new(0.0, 0.5).unwrap();
        let mut x = Array2::zeros((3 * per, 3));
        let mut labels = Vec::new();
        for (c, ctr) in centers.iter().enumerate() {
            for i in 0..per {
                for j in 0..3 {
                    x[[c * per + i, j]] = ctr[j] + n.sample(&mut rng);
                }
                labels.push(c);
            }
        }
        (x, labels)
    }

    #[test]
    fn joints_normalize_and_calibrate() {
        let (x, _) = blobs(10, 1);
        let j = joint_probabilities(x.view(), 5.0).unwrap();
        assert!((j.p.sum() - 1.0).abs() < 1e-9);
        assert!(j.perplexities.iter().all(|p| (p - 5.0).abs() < PERPLEXITY_TOL));
        assert!(joint_probabilities(x.view(), 10.0).is_err());
    }

    #[test]
    fn duplicate_points_have_the_largest_conditional() {
        let (mut x, _) = blobs(5, 2);
        let r = x.row(3).to_owned();
        x.row_mut(7).assign(&r);
        let d2 = pairwise_sq_distances(x.view());
        let mut out = vec![0.0; x.nrows()];
        calibrate_row(d2.row(3), 3, 3.0, &mut out);
        let max = out.iter().enumerate().filter(|&(j, _)| j != 3).map(|(_, &v)| v).fold(0.0, f64::max);
        assert_eq!(out[7], max);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (x, _) = blobs(7, 3);
        let p = joint_probabilities(x.view(), 4.0).unwrap().p;
        let mut rng = seed::rng(4);
        let n = Normal::new(0.0, 1.0).unwrap();
        let y = Array2::from_shape_fn((x.nrows(), 2), |_| n.sample(&mut rng));
        let (_, g) = kl_and_gradient(p.view(), y.view());
        let h = 1e-5;
        for i in 0..y.nrows() {
            for d in 0..2 {
                let mut yp = y.clone();
                yp[[i, d]] += h;
                let mut ym = y.clone();
                ym[[i, d]] -= h;
                let fd = (kl_and_gradient(p.view(), yp.view()).0 - kl_and_gradient(p.view(), ym.view()).0) / (2.0 * h);
                assert!((fd - g[[i, d]]).abs() <= 1e-4 * g[[i, d]].abs().max(1e-3), "{fd} vs {}", g[[i, d]]);
            }
        }
    }

    #[test]
    fn route_ties_and_sizes() {
        let points = array![[-1.0, 0.0], [1.0, 0.0], [1.0, 0.1]];
        let r = route_in(points.view(), &[0, 1, 1], [0.0, 0.0]);
        assert_eq!(r.cluster, 1);
        let r = route_in(points.slice(ndarray::s![..2, ..]), &[0, 1], [0.0, 0.0]);
        assert_eq!(r.cluster, 0);
        assert_eq!(r.distances, vec![1.0, 1.0]);
    }

    #[test]
    fn small_map_routes_its_own_rows() {
        let (x, labels) = blobs(20, 5);
        let cfg = TsneConfig { perplexity: 10.0, n_iter: 300, exaggeration_iters: 100, seed: 9, ..Default::default() };
        let map = fit_tsne(x.view(), &labels, &cfg).unwrap();
        assert!(map.kl_trace.last().unwrap() < &map.kl_trace[0]);
        for (i, &l) in labels.iter().enumerate() {
            assert_eq!(map.route(x.row(i)).unwrap().cluster, l);
        }
        let w = map.interpolation_weights(x.row(0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
