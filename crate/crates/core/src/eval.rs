//! Prediction metrics and the three-way model comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::{info, warn};
use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{train_lm, LmConfig, MlpArchitecture, RegressorModel};
use crate::seed;
use crate::transfer::{plan_transfer, train_chain, TaskData, TransferPlan, DEFAULT_FILTER_PCT};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    /// Percentage over rows with a non-zero actual value.
    pub value: f64,
    /// Rows skipped because the actual value was zero.
    pub excluded: usize,
}

fn check_lengths(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::InvalidInput(format!(
            "{} actual values but {} predictions",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::InvalidInput("metrics need at least one row".into()));
    }
    Ok(())
}

/// `100/m · Σ |A - P| / |A|` over rows with `A ≠ 0`.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<Mape> {
    check_lengths(actual, predicted)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (&a, &p) in actual.iter().zip(predicted) {
        if a == 0.0 {
            continue;
        }
        sum += ((a - p) / a).abs();
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidInput("every actual value is zero; MAPE is undefined".into()));
    }
    Ok(Mape { value: 100.0 * sum / used as f64, excluded: actual.len() - used })
}

/// Percentage of rows with `|A - P| <= t`, per threshold.
pub fn threshold_coverage(actual: &[f64], predicted: &[f64], thresholds: &[f64]) -> Result<Vec<f64>> {
    check_lengths(actual, predicted)?;
    let n = actual.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let within = actual.iter().zip(predicted).filter(|(a, p)| (*a - *p).abs() <= t).count();
            100.0 * within as f64 / n
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RangeStat {
    /// Mean absolute error in minutes.
    MeanAbsolute,
    /// Interquartile range of the absolute errors.
    InterquartileRange,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Spread of prediction errors in minutes.
pub fn prediction_range(actual: &[f64], predicted: &[f64], stat: RangeStat) -> Result<f64> {
    check_lengths(actual, predicted)?;
    let mut errors: Vec<f64> = actual.iter().zip(predicted).map(|(a, p)| (a - p).abs()).collect();
    Ok(match stat {
        RangeStat::MeanAbsolute => errors.iter().sum::<f64>() / errors.len() as f64,
        RangeStat::InterquartileRange => {
            errors.sort_by(f64::total_cmp);
            quantile(&errors, 0.75) - quantile(&errors, 0.25)
        }
    })
}

pub const COVERAGE_THRESHOLDS: [f64; 3] = [30.0, 60.0, 90.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub mape_pct: f64,
    pub mape_excluded: usize,
    pub pred_range_min: f64,
    pub pct_within_30: f64,
    pub pct_within_60: f64,
    pub pct_within_90: f64,
}

impl Metrics {
    pub fn compute(actual: &[f64], predicted: &[f64], range: RangeStat) -> Result<Self> {
        let m = mape(actual, predicted)?;
        let cov = threshold_coverage(actual, predicted, &COVERAGE_THRESHOLDS)?;
        Ok(Metrics {
            n: actual.len(),
            mape_pct: m.value,
            mape_excluded: m.excluded,
            pred_range_min: prediction_range(actual, predicted, range)?,
            pct_within_30: cov[0],
            pct_within_60: cov[1],
            pct_within_90: cov[2],
        })
    }
}

/// Improvement of `new` over `base` as the ratio `(base - new)/new · 100`
/// and as the plain difference `base - new`.
pub fn improvement(base_mape: f64, new_mape: f64) -> (f64, f64) {
    let diff = base_mape - new_mape;
    let ratio = if new_mape > 0.0 { 100.0 * diff / new_mape } else { f64::INFINITY };
    (ratio, diff)
}

/// Row partition shared by every variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub const TRAIN_FRACTION: f64 = 0.70;
pub const VALIDATION_FRACTION: f64 = 0.15;

/// Seeded 70/15/15 partition of `0..m`; each part is sorted.
pub fn split_indices(m: usize, seed: u64) -> Result<Split> {
    let n_train = (TRAIN_FRACTION * m as f64).round() as usize;
    let n_val = (VALIDATION_FRACTION * m as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= m {
        return Err(Error::InvalidInput(format!("{m} rows are too few for a 70/15/15 split")));
    }
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut seed::derived_rng(seed, "split"));
    let part = |r: std::ops::Range<usize>| {
        let mut v = idx[r].to_vec();
        v.sort_unstable();
        v
    };
    Ok(Split { train: part(0..n_train), validation: part(n_train..n_train + n_val), test: part(n_train + n_val..m) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonConfig {
    pub hidden_sizes: Vec<usize>,
    pub lm: LmConfig,
    /// Train the transfer chain as a third variant.
    pub transfer: bool,
    pub filter_percentile: f64,
    pub range: RangeStat,
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            hidden_sizes: vec![8],
            lm: LmConfig::default(),
            transfer: true,
            filter_percentile: DEFAULT_FILTER_PCT,
            range: RangeStat::MeanAbsolute,
        }
    }
}

/// Everything a comparison needs: standardized rows, targets, one cluster id
/// per row and the split.
#[derive(Debug, Clone, Copy)]
pub struct ComparisonInput<'a> {
    pub x: ArrayView2<'a, f64>,
    pub y: &'a [f64],
    pub clusters: &'a [usize],
    pub k: usize,
    pub split: &'a Split,
}

pub const GLOBAL: &str = "global";
pub const CLUSTER_SCRATCH: &str = "cluster_scratch";
pub const CLUSTER_TRANSFER: &str = "cluster_transfer";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantResult {
    pub per_cluster: BTreeMap<usize, Metrics>,
    pub overall: Option<Metrics>,
    /// Minutes per test row, aligned with `EvalReport::test_rows`; NaN where
    /// the variant has no model for the row's cluster.
    #[serde(with = "nonfinite::vec")]
    pub predictions: Vec<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub base: String,
    pub new: String,
    /// `None` for all test rows together.
    pub cluster: Option<usize>,
    #[serde(with = "nonfinite::one")]
    pub ratio_pct: f64,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Variant whose numbers fill `per_cluster` and `global`.
    pub primary: String,
    pub per_cluster: BTreeMap<usize, Metrics>,
    pub global: Metrics,
    pub comparison: BTreeMap<String, VariantResult>,
    pub improvements: Vec<Improvement>,
    pub test_rows: Vec<usize>,
    pub test_clusters: Vec<usize>,
    pub actual: Vec<f64>,
    pub range: RangeStat,
    pub transfer_plan: Option<TransferPlan>,
}

fn metrics_by_cluster(
    actual: &[f64],
    predicted: &[f64],
    clusters: &[usize],
    range: RangeStat,
) -> Result<(BTreeMap<usize, Metrics>, Option<Metrics>)> {
    let mut groups: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let (mut all_a, mut all_p) = (Vec::new(), Vec::new());
    for ((&a, &p), &c) in actual.iter().zip(predicted).zip(clusters) {
        if p.is_nan() {
            continue;
        }
        let g = groups.entry(c).or_default();
        g.0.push(a);
        g.1.push(p);
        all_a.push(a);
        all_p.push(p);
    }
    let mut out = BTreeMap::new();
    for (c, (a, p)) in groups {
        out.insert(c, Metrics::compute(&a, &p, range)?);
    }
    let overall = if all_a.is_empty() { None } else { Some(Metrics::compute(&all_a, &all_p, range)?) };
    Ok((out, overall))
}

fn variant(
    actual: &[f64],
    clusters: &[usize],
    range: RangeStat,
    predictions: Vec<f64>,
    failure: Option<String>,
) -> Result<VariantResult> {
    let (per_cluster, overall) = metrics_by_cluster(actual, &predictions, clusters, range)?;
    Ok(VariantResult { per_cluster, overall, predictions, failure })
}

fn predict_by_cluster(models: &BTreeMap<usize, RegressorModel>, x: ArrayView2<f64>, clusters: &[usize]) -> Result<Vec<f64>> {
    x.rows()
        .into_iter()
        .zip(clusters)
        .map(|(row, c)| match models.get(c) {
            Some(m) => m.predict_row(&row.to_vec()),
            None => Ok(f64::NAN),
        })
        .collect()
}

/// Trains the global model, per-cluster models from scratch and (optionally)
/// the transfer chain, and scores all of them on the same test rows.
pub fn run_comparison(input: ComparisonInput<'_>, cfg: &ComparisonConfig) -> Result<EvalReport> {
    let ComparisonInput { x, y, clusters, k, split } = input;
    let m = x.nrows();
    if y.len() != m || clusters.len() != m {
        return Err(Error::InvalidInput(format!("{m} rows but {} targets and {} cluster ids", y.len(), clusters.len())));
    }
    if let Some(&bad) = split.train.iter().chain(&split.validation).chain(&split.test).find(|&&i| i >= m) {
        return Err(Error::InvalidInput(format!("split refers to row {bad} of {m}")));
    }
    if let Some(&c) = clusters.iter().find(|&&c| c >= k) {
        return Err(Error::InvalidInput(format!("cluster id {c} outside 0..{k}")));
    }
    let arch = MlpArchitecture::new(x.ncols(), cfg.hidden_sizes.clone())?;
    let pick = |rows: &[usize]| (x.select(Axis(0), rows), rows.iter().map(|&i| y[i]).collect::<Vec<f64>>());
    let (train_x, train_y) = pick(&split.train);
    let (test_x, actual) = pick(&split.test);
    let test_clusters: Vec<usize> = split.test.iter().map(|&i| clusters[i]).collect();
    let rows_of = |part: &[usize], c: usize| part.iter().copied().filter(|&i| clusters[i] == c).collect::<Vec<usize>>();
    let tasks: BTreeMap<usize, TaskData> = (0..k)
        .filter_map(|c| {
            let rows = rows_of(&split.train, c);
            (!rows.is_empty()).then(|| {
                let (train_x, train_y) = pick(&rows);
                (c, TaskData { train_x, train_y })
            })
        })
        .collect();

    let global = || -> Result<VariantResult> {
        info!("training global model on {} rows", train_y.len());
        match train_lm(&arch, train_x.view(), &train_y, &cfg.lm, None) {
            Ok(model) => variant(&actual, &test_clusters, cfg.range, model.predict(test_x.view())?, None),
            Err(e) => variant(&actual, &test_clusters, cfg.range, vec![f64::NAN; actual.len()], Some(e.to_string())),
        }
    };
    let scratch = || -> Result<VariantResult> {
        let mut models = BTreeMap::new();
        let mut failure = None;
        for (&c, task) in &tasks {
            info!("training cluster {c} from scratch on {} rows", task.train_y.len());
            match train_lm(&arch, task.train_x.view(), &task.train_y, &cfg.lm, None) {
                Ok(model) => {
                    models.insert(c, model);
                }
                Err(e) => {
                    warn!("cluster {c} failed: {e}");
                    failure.get_or_insert_with(|| format!("cluster {c}: {e}"));
                }
            }
        }
        variant(&actual, &test_clusters, cfg.range, predict_by_cluster(&models, test_x.view(), &test_clusters)?, failure)
    };
    let transfer = || -> Result<Option<(VariantResult, TransferPlan)>> {
        if !cfg.transfer || tasks.len() < 2 {
            return Ok(None);
        }
        let ids: Vec<usize> = tasks.keys().copied().collect();
        // Similarity uses validation rows; a cluster with fewer than two falls back to its training rows.
        let views: Vec<ndarray::Array2<f64>> = ids
            .iter()
            .map(|&c| {
                let rows = rows_of(&split.validation, c);
                if rows.len() >= 2 { x.select(Axis(0), &rows) } else { tasks[&c].train_x.clone() }
            })
            .collect();
        let view_refs: Vec<ArrayView2<f64>> = views.iter().map(|v| v.view()).collect();
        let sizes: Vec<usize> = ids.iter().map(|c| tasks[c].train_y.len()).collect();
        let plan = plan_transfer(&ids, &view_refs, &sizes, cfg.filter_percentile)?;
        info!("transfer source {} then {:?}", plan.source, plan.order);
        let chain = train_chain(&plan, &tasks, &arch, &cfg.lm)?;
        let failure = chain.failure.as_ref().map(|(c, e)| format!("cluster {c}: {e}"));
        let preds = predict_by_cluster(&chain.models, test_x.view(), &test_clusters)?;
        Ok(Some((variant(&actual, &test_clusters, cfg.range, preds, failure)?, plan)))
    };
    let (global, (scratch, transfer)) = rayon::join(global, || rayon::join(scratch, transfer));
    let (global, scratch, transfer) = (global?, scratch?, transfer?);

    let mut comparison = BTreeMap::new();
    comparison.insert(GLOBAL.to_string(), global);
    comparison.insert(CLUSTER_SCRATCH.to_string(), scratch);
    let mut transfer_plan = None;
    if let Some((v, plan)) = transfer {
        comparison.insert(CLUSTER_TRANSFER.to_string(), v);
        transfer_plan = Some(plan);
    }
    let usable = |name: &str| comparison.get(name).is_some_and(|v| v.failure.is_none() && v.overall.is_some());
    let primary = [CLUSTER_TRANSFER, CLUSTER_SCRATCH, GLOBAL]
        .into_iter()
        .find(|n| usable(n))
        .or_else(|| [CLUSTER_TRANSFER, CLUSTER_SCRATCH, GLOBAL].into_iter().find(|n| comparison.get(*n).is_some_and(|v| v.overall.is_some())))
        .ok_or_else(|| Error::Numerical("every variant failed to train".into()))?
        .to_string();
    let improvements = improvements(&comparison);
    let p = &comparison[&primary];
    Ok(EvalReport {
        per_cluster: p.per_cluster.clone(),
        global: p.overall.clone().expect("primary has metrics"),
        primary,
        comparison,
        improvements,
        test_rows: split.test.clone(),
        test_clusters,
        actual,
        range: cfg.range,
        transfer_plan,
    })
}

fn improvements(comparison: &BTreeMap<String, VariantResult>) -> Vec<Improvement> {
    let pairs = [(GLOBAL, CLUSTER_SCRATCH), (CLUSTER_SCRATCH, CLUSTER_TRANSFER), (GLOBAL, CLUSTER_TRANSFER)];
    let mut out = Vec::new();
    for (base, new) in pairs {
        let (Some(b), Some(n)) = (comparison.get(base), comparison.get(new)) else { continue };
        let mut push = |cluster, bm: &Metrics, nm: &Metrics| {
            let (ratio_pct, difference) = improvement(bm.mape_pct, nm.mape_pct);
            out.push(Improvement { base: base.into(), new: new.into(), cluster, ratio_pct, difference });
        };
        for (c, bm) in &b.per_cluster {
            if let Some(nm) = n.per_cluster.get(c) {
                push(Some(*c), bm, nm);
            }
        }
        if let (Some(bm), Some(nm)) = (&b.overall, &n.overall) {
            push(None, bm, nm);
        }
    }
    out
}

impl EvalReport {
    /// Rebuilds every metric table from the stored raw vectors.
    pub fn recompute(&self) -> Result<EvalReport> {
        let mut out = self.clone();
        for v in out.comparison.values_mut() {
            let (per_cluster, overall) = metrics_by_cluster(&self.actual, &v.predictions, &self.test_clusters, self.range)?;
            v.per_cluster = per_cluster;
            v.overall = overall;
        }
        let p = &out.comparison[&out.primary];
        out.per_cluster = p.per_cluster.clone();
        out.global = p.overall.clone().ok_or_else(|| Error::InvalidInput("primary variant has no predictions".into()))?;
        out.improvements = improvements(&out.comparison);
        Ok(out)
    }

    /// Plain-text tables: per-variant metrics per cluster, then improvements.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "primary variant: {}", self.primary);
        let _ = writeln!(s, "{:<17} {:>7} {:>6} {:>9} {:>10} {:>7} {:>7} {:>7}", "variant", "cluster", "n", "mape_pct", "range_min", "<=30", "<=60", "<=90");
        for (name, v) in &self.comparison {
            let rows = v.per_cluster.iter().map(|(c, m)| (c.to_string(), m)).chain(v.overall.iter().map(|m| ("all".to_string(), m)));
            for (c, m) in rows {
                let _ = writeln!(
                    s,
                    "{name:<17} {c:>7} {:>6} {:>9.3} {:>10.2} {:>7.2} {:>7.2} {:>7.2}",
                    m.n, m.mape_pct, m.pred_range_min, m.pct_within_30, m.pct_within_60, m.pct_within_90
                );
            }
            if let Some(f) = &v.failure {
                let _ = writeln!(s, "{name:<17} failed: {f}");
            }
        }
        let _ = writeln!(s, "\n{:<17} {:<17} {:>7} {:>10} {:>10}", "base", "new", "cluster", "ratio_pct", "diff_pct");
        for i in &self.improvements {
            let c = i.cluster.map_or("all".to_string(), |c| c.to_string());
            let _ = writeln!(s, "{:<17} {:<17} {c:>7} {:>10.2} {:>10.3}", i.base, i.new, i.ratio_pct, i.difference);
        }
        s
    }

    /// One row per test row with the actual time and each variant's prediction.
    pub fn write_predictions_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut csv = csv::Writer::from_writer(writer);
        let mut header = vec!["row".to_string(), "cluster".into(), "actual".into()];
        header.extend(self.comparison.keys().cloned());
        csv.write_record(&header)?;
        for (j, (&row, &c)) in self.test_rows.iter().zip(&self.test_clusters).enumerate() {
            let mut rec = vec![row.to_string(), c.to_string(), crate::ingest::fmt_f64(self.actual[j])];
            rec.extend(self.comparison.values().map(|v| crate::ingest::fmt_f64(v.predictions[j])));
            csv.write_record(&rec)?;
        }
        csv.flush().map_err(|e| Error::io("<predictions csv>", e))?;
        Ok(())
    }
}

/// JSON has no NaN or infinity; such values are written as strings.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(v: f64) -> Repr {
        if v.is_finite() {
            Repr::Num(v)
        } else {
            Repr::Text(v.to_string())
        }
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(|_| E::custom(format!("expected a number, got `{t}`"))),
        }
    }

    pub mod one {
        use super::*;

        pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
            to_repr(*v).serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
            from_repr(Repr::deserialize(d)?)
        }
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(v.iter().map(|&x| to_repr(x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }
}
