//! Similarity-weighted transfer between cluster-wise regression tasks.
//!
//! The source task is trained from scratch. Each learning task in turn drops
//! its rows least similar to the current source's knowledge matrix, starts
//! from `ω · θ_source`, trains, and then serves as the source for the next.

use std::collections::BTreeMap;

use log::{info, warn};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{train_lm, LmConfig, MlpArchitecture, RegressorModel, TrainedFrom};
use crate::sdesc::dictionary::sq_dist;
use crate::seed;

/// Below this similarity the scaled source parameters are discarded.
pub const OMEGA_FALLBACK: f64 = 0.05;
pub const DEFAULT_FILTER_PCT: f64 = 2.0;

/// Stored state of a trained task: its training rows, targets and parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeMatrix {
    pub source_cluster: usize,
    pub features: Array2<f64>,
    pub actual_rt: Vec<f64>,
    pub architecture: MlpArchitecture,
    pub params: Vec<f64>,
}

fn mean_row(x: ArrayView2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(x.ncols()))
}

/// `ω = exp(-|μ_A - μ_B| / s)`, `s` the mean distance of every row of A and B
/// to its own subset mean.
pub fn similarity(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::InvalidInput("similarity needs non-empty subsets".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::InvalidInput(format!("subsets have {} and {} features", a.ncols(), b.ncols())));
    }
    let (ma, mb) = (mean_row(a), mean_row(b));
    let spread = |x: ArrayView2<f64>, m: &Array1<f64>| -> f64 { x.rows().into_iter().map(|r| sq_dist(r, m.view()).sqrt()).sum() };
    let s = (spread(a, &ma) + spread(b, &mb)) / (a.nrows() + b.nrows()) as f64;
    let d = sq_dist(ma.view(), mb.view()).sqrt();
    if d == 0.0 {
        return Ok(1.0);
    }
    Ok((-d / s.max(f64::MIN_POSITIVE)).exp())
}

/// Symmetric similarity matrix over `subsets`, unit diagonal.
pub fn similarity_matrix(subsets: &[ArrayView2<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = subsets.len();
    let mut omega = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let w = similarity(subsets[i], subsets[j])?;
            omega[i][j] = w;
            omega[j][i] = w;
        }
    }
    Ok(omega)
}

/// Index with the highest mean similarity to the others; ties go to the
/// larger subset, then the lower index.
pub fn choose_source(omega: &[Vec<f64>], sizes: &[usize]) -> Result<usize> {
    let n = omega.len();
    if n < 2 || sizes.len() != n {
        return Err(Error::InvalidInput("choosing a source needs at least two subsets with sizes".into()));
    }
    let mean = |i: usize| (0..n).filter(|&j| j != i).map(|j| omega[i][j]).sum::<f64>() / (n - 1) as f64;
    let mut best = 0;
    for i in 1..n {
        let (mi, mb) = (mean(i), mean(best));
        if mi > mb || (mi == mb && sizes[i] > sizes[best]) {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    /// Cluster ids, indexing `omega`.
    pub clusters: Vec<usize>,
    pub source: usize,
    /// Learning tasks in training order; the source is not included.
    pub order: Vec<usize>,
    pub omega: Vec<Vec<f64>>,
    pub filter_percentile: f64,
}

impl TransferPlan {
    pub fn omega_between(&self, a: usize, b: usize) -> f64 {
        let pos = |c: usize| self.clusters.iter().position(|&x| x == c).expect("cluster in plan");
        self.omega[pos(a)][pos(b)]
    }
}

/// Source by mean similarity; after it, repeatedly the remaining cluster most
/// similar to the one trained last.
pub fn plan_transfer(
    clusters: &[usize],
    validation: &[ArrayView2<f64>],
    sizes: &[usize],
    filter_percentile: f64,
) -> Result<TransferPlan> {
    if !(0.0..100.0).contains(&filter_percentile) {
        return Err(Error::Config(format!("filter percentile must be in [0, 100), got {filter_percentile}")));
    }
    let omega = similarity_matrix(validation)?;
    let src = choose_source(&omega, sizes)?;
    let mut order = Vec::new();
    let mut remaining: Vec<usize> = (0..clusters.len()).filter(|&i| i != src).collect();
    let mut current = src;
    while !remaining.is_empty() {
        let (pos, _) = remaining
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (p, &i)| if omega[current][i] > acc.1 { (p, omega[current][i]) } else { acc });
        current = remaining.remove(pos);
        order.push(clusters[current]);
    }
    Ok(TransferPlan { clusters: clusters.to_vec(), source: clusters[src], order, omega, filter_percentile })
}

/// `ω · θ_source`, or a fresh random start when `ω` is below the fallback
/// threshold. The flag reports whether the source was used.
pub fn transfer_init(source: &KnowledgeMatrix, target: &MlpArchitecture, omega: f64, seed: u64) -> Result<(Vec<f64>, bool)> {
    if &source.architecture != target {
        return Err(Error::InvalidInput(format!(
            "cannot transfer between architectures {:?} and {:?}",
            source.architecture, target
        )));
    }
    if omega < OMEGA_FALLBACK {
        warn!("similarity {omega:.4} is below {OMEGA_FALLBACK}; using a random start instead of the source");
        return Ok((target.random_params(seed), false));
    }
    Ok((source.params.iter().map(|p| omega * p).collect(), true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub retained: Vec<usize>,
    pub removed: Vec<usize>,
    pub scores: Vec<f64>,
    pub sigma: f64,
}

fn median_pairwise_distance(x: ArrayView2<f64>) -> f64 {
    let m = x.nrows();
    let mut d = Vec::with_capacity(m * m.saturating_sub(1) / 2);
    for i in 0..m {
        for j in i + 1..m {
            d.push(sq_dist(x.row(i), x.row(j)));
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    d.select_nth_unstable_by(mid, f64::total_cmp).1.sqrt()
}

fn row_cmp(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> std::cmp::Ordering {
    a.iter().zip(b.iter()).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
}

/// Scores each learning row by its Gaussian similarity to the nearest
/// knowledge row and removes the `⌈pct/100 · n⌉` lowest.
pub fn filter_learning_data(learning: ArrayView2<f64>, knowledge: &KnowledgeMatrix, percentile: f64) -> Result<FilterOutcome> {
    if !(0.0..100.0).contains(&percentile) {
        return Err(Error::Config(format!("filter percentile must be in [0, 100), got {percentile}")));
    }
    if knowledge.features.nrows() == 0 {
        return Err(Error::InvalidInput("knowledge matrix has no rows".into()));
    }
    if learning.ncols() != knowledge.features.ncols() {
        return Err(Error::InvalidInput("learning rows and knowledge matrix differ in width".into()));
    }
    let sigma = median_pairwise_distance(knowledge.features.view());
    let scores: Vec<f64> = learning
        .rows()
        .into_iter()
        .map(|r| {
            let nearest = knowledge.features.rows().into_iter().map(|k| sq_dist(r, k)).fold(f64::INFINITY, f64::min);
            if nearest == 0.0 {
                1.0
            } else if sigma > 0.0 {
                (-nearest / (2.0 * sigma * sigma)).exp()
            } else {
                0.0
            }
        })
        .collect();
    let n = learning.nrows();
    let n_remove = ((percentile / 100.0) * n as f64).ceil() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        scores[a].total_cmp(&scores[b]).then_with(|| row_cmp(learning.row(a), learning.row(b))).then(a.cmp(&b))
    });
    let mut removed: Vec<usize> = order[..n_remove.min(n)].to_vec();
    removed.sort_unstable();
    let mut retained: Vec<usize> = order[n_remove.min(n)..].to_vec();
    retained.sort_unstable();
    Ok(FilterOutcome { retained, removed, scores, sigma })
}

/// Training and validation rows of one cluster.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub train_x: Array2<f64>,
    pub train_y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStep {
    pub cluster: usize,
    pub source_cluster: Option<usize>,
    pub omega: Option<f64>,
    pub used_source: bool,
    pub rows_removed: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainResult {
    pub models: BTreeMap<usize, RegressorModel>,
    pub steps: Vec<ChainStep>,
    /// Cluster and message of the step that failed, if any.
    pub failure: Option<(usize, String)>,
}

fn knowledge(cluster: usize, x: Array2<f64>, y: Vec<f64>, model: &RegressorModel) -> KnowledgeMatrix {
    KnowledgeMatrix {
        source_cluster: cluster,
        features: x,
        actual_rt: y,
        architecture: model.architecture.clone(),
        params: model.params.clone(),
    }
}

/// Runs the chain. A failing step stops it; models trained so far are kept.
pub fn train_chain(
    plan: &TransferPlan,
    tasks: &BTreeMap<usize, TaskData>,
    arch: &MlpArchitecture,
    lm: &LmConfig,
) -> Result<ChainResult> {
    for c in std::iter::once(&plan.source).chain(&plan.order) {
        if !tasks.contains_key(c) {
            return Err(Error::InvalidInput(format!("no training data for cluster {c} in the transfer plan")));
        }
    }
    let mut result = ChainResult { models: BTreeMap::new(), steps: Vec::new(), failure: None };
    let src = &tasks[&plan.source];
    let model = match train_lm(arch, src.train_x.view(), &src.train_y, lm, None) {
        Ok(m) => m,
        Err(e) => {
            result.failure = Some((plan.source, e.to_string()));
            return Ok(result);
        }
    };
    let mut current = knowledge(plan.source, src.train_x.clone(), src.train_y.clone(), &model);
    result.steps.push(ChainStep { cluster: plan.source, source_cluster: None, omega: None, used_source: false, rows_removed: 0 });
    result.models.insert(plan.source, model);

    for &c in &plan.order {
        let task = &tasks[&c];
        let step = || -> Result<(RegressorModel, Array2<f64>, Vec<f64>, ChainStep)> {
            let filter = filter_learning_data(task.train_x.view(), &current, plan.filter_percentile)?;
            let x = task.train_x.select(Axis(0), &filter.retained);
            let y: Vec<f64> = filter.retained.iter().map(|&i| task.train_y[i]).collect();
            let omega = plan.omega_between(current.source_cluster, c);
            let (init, used) = transfer_init(&current, arch, omega, seed::derive(lm.seed, &format!("transfer-fallback-{c}")))?;
            let mut model = train_lm(arch, x.view(), &y, lm, Some(&init))?;
            model.provenance.source_cluster = Some(current.source_cluster);
            model.provenance.omega = Some(omega);
            if !used {
                model.provenance.trained_from = TrainedFrom::Scratch;
            }
            let info = ChainStep {
                cluster: c,
                source_cluster: Some(current.source_cluster),
                omega: Some(omega),
                used_source: used,
                rows_removed: filter.removed.len(),
            };
            Ok((model, x, y, info))
        };
        match step() {
            Ok((model, x, y, info)) => {
                info!("transfer {:?} -> {c}: omega {:.4}, removed {} rows", info.source_cluster, info.omega.unwrap_or(0.0), info.rows_removed);
                current = knowledge(c, x, y, &model);
                result.steps.push(info);
                result.models.insert(c, model);
            }
            Err(e) => {
                warn!("transfer chain stopped at cluster {c}: {e}");
                result.failure = Some((c, e.to_string()));
                break;
            }
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_and_symmetry() {
        let a = array![[0.0, 1.0], [2.0, 3.0], [1.0, 1.0]];
        let b = array![[5.0, 1.0], [4.0, 0.0]];
        assert_eq!(similarity(a.view(), a.view()).unwrap(), 1.0);
        assert_eq!(similarity(a.view(), b.view()).unwrap(), similarity(b.view(), a.view()).unwrap());
    }

    #[test]
    fn ten_spreads_apart() {
        // Each subset has spread 1 (points at ±1 around the mean); means 10 apart.
        let a = array![[-1.0], [1.0]];
        let b = array![[9.0], [11.0]];
        let w = similarity(a.view(), b.view()).unwrap();
        assert!((w - (-10.0f64).exp()).abs() < 1e-18);
        assert!(w < 5e-5);
    }

    #[test]
    fn collinear_middle_is_source() {
        let sets = [array![[-1.0], [1.0]], array![[4.0], [6.0]], array![[9.0], [11.0]]];
        let views: Vec<_> = sets.iter().map(|s| s.view()).collect();
        let omega = similarity_matrix(&views).unwrap();
        assert_eq!(choose_source(&omega, &[2, 2, 2]).unwrap(), 1);
    }

    #[test]
    fn two_subsets_tie_goes_to_larger() {
        let omega = vec![vec![1.0, 0.3], vec![0.3, 1.0]];
        assert_eq!(choose_source(&omega, &[10, 20]).unwrap(), 1);
        assert_eq!(choose_source(&omega, &[20, 10]).unwrap(), 0);
    }

    fn km(arch: &MlpArchitecture) -> KnowledgeMatrix {
        KnowledgeMatrix {
            source_cluster: 0,
            features: array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            actual_rt: vec![1.0, 2.0, 3.0],
            architecture: arch.clone(),
            params: arch.random_params(3),
        }
    }

    #[test]
    fn init_scaling_and_fallback() {
        let arch = MlpArchitecture::new(2, vec![3]).unwrap();
        let k = km(&arch);
        assert_eq!(transfer_init(&k, &arch, 1.0, 0).unwrap(), (k.params.clone(), true));
        let (half, used) = transfer_init(&k, &arch, 0.5, 0).unwrap();
        assert!(used);
        assert!(half.iter().zip(&k.params).all(|(h, p)| *h == 0.5 * p));
        let (fallback, used) = transfer_init(&k, &arch, 0.0, 9).unwrap();
        assert!(!used);
        assert_eq!(fallback, arch.random_params(9));
        assert!(transfer_init(&k, &MlpArchitecture::new(2, vec![4]).unwrap(), 1.0, 0).is_err());
    }

    #[test]
    fn filter_removes_the_outlier() {
        let arch = MlpArchitecture::new(2, vec![3]).unwrap();
        let k = km(&arch);
        let mut rows: Vec<[f64; 2]> = (0..99).map(|i| [0.3 + 0.001 * i as f64, 0.3]).collect();
        rows.insert(40, [25.0, -30.0]);
        let learning = Array2::from_shape_fn((100, 2), |(i, j)| rows[i][j]);
        let out = filter_learning_data(learning.view(), &k, 1.0).unwrap();
        assert_eq!(out.removed, vec![40]);
        let none = filter_learning_data(learning.view(), &k, 0.0).unwrap();
        assert!(none.removed.is_empty());
        let dup = filter_learning_data(k.features.view(), &k, 99.0).unwrap();
        assert!(dup.scores.iter().all(|&s| s == 1.0));
    }
}
