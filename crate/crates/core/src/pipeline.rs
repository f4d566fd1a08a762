//! End-to-end experiment: features, split, clustering, routing, comparison.
//!
//! Stage seeds are derived from the top-level seed: `split`, `sdesc`, `tsne`
//! and `lm`. Seeds inside the stage configs are overwritten.

use std::collections::BTreeMap;

use log::info;
use ndarray::{ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{fit_tsne, TsneConfig, TsneMap};
use crate::error::{Error, Result};
use crate::eval::{run_comparison, split_indices, ComparisonConfig, ComparisonInput, EvalReport, Split};
use crate::features::{build_matrix, FeatureMatrix, FeatureSpec};
use crate::ingest::OutageRecord;
use crate::neural::{train_lm, MlpArchitecture, RegressorModel};
use crate::sdesc::{self, assign_summary, order_by_restoration, ClusterSummary, SdescConfig, SdescModel};
use crate::seed;
use crate::transfer::{plan_transfer, train_chain, ChainStep, TaskData, TransferPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub seed: u64,
    pub features: FeatureSpec,
    pub sdesc: SdescConfig,
    pub tsne: TsneConfig,
    pub comparison: ComparisonConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            features: FeatureSpec::default(),
            sdesc: SdescConfig::default(),
            tsne: TsneConfig::default(),
            comparison: ComparisonConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Copy with every stage seed derived from `seed`.
    pub fn seeded(&self) -> PipelineConfig {
        let mut c = self.clone();
        c.sdesc.seed = seed::derive(self.seed, "sdesc");
        c.tsne.seed = seed::derive(self.seed, "tsne");
        c.comparison.lm.seed = seed::derive(self.seed, "lm");
        c
    }

    pub fn split_seed(&self) -> u64 {
        seed::derive(self.seed, "split")
    }
}

/// SDESC fit with clusters renumbered by descending mean restoration time.
pub fn cluster_rows(x: ArrayView2<f64>, restoration: &[f64], cfg: &SdescConfig) -> Result<SdescModel> {
    let mut model = sdesc::fit(x, cfg)?;
    let order = order_by_restoration(&model.assignments, model.k, restoration);
    model.relabel(&order)?;
    Ok(model)
}

/// Routes every row through the map.
pub fn route_rows(map: &TsneMap, x: ArrayView2<f64>) -> Result<Vec<usize>> {
    x.axis_iter(Axis(0)).into_par_iter().map(|row| map.route(row).map(|r| r.cluster)).collect()
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub matrix: FeatureMatrix,
    pub split: Split,
    /// Fitted on the training rows only.
    pub sdesc: SdescModel,
    pub summary: Vec<ClusterSummary>,
    pub map: TsneMap,
    /// SDESC cluster for training rows, routed cluster for the rest.
    pub clusters: Vec<usize>,
    pub report: EvalReport,
    pub config: PipelineConfig,
}

pub fn run_experiment(records: &[OutageRecord], cfg: &PipelineConfig) -> Result<Experiment> {
    let cfg = cfg.seeded();
    let matrix = build_matrix(records, &cfg.features)?;
    let m = matrix.nrows();
    let split = split_indices(m, cfg.split_seed())?;
    info!("split {} / {} / {} rows", split.train.len(), split.validation.len(), split.test.len());

    let train_x = matrix.values.select(Axis(0), &split.train);
    let train_rt: Vec<f64> = split.train.iter().map(|&i| matrix.target[i]).collect();
    let model = cluster_rows(train_x.view(), &train_rt, &cfg.sdesc)?;
    info!("clustering chose k={} with sizes {:?}", model.k, model.cluster_sizes());
    let customers: Vec<f64> =
        split.train.iter().map(|&i| records[i].outage.customers_interrupted as f64).collect();
    let summary = assign_summary(&model.assignments, model.k, &customers, &train_rt)?;

    let map = fit_tsne(train_x.view(), &model.assignments, &cfg.tsne)?;
    let held_out: Vec<usize> = split.validation.iter().chain(&split.test).copied().collect();
    let routed = route_rows(&map, matrix.values.select(Axis(0), &held_out).view())?;
    let mut clusters = vec![0; m];
    for (&i, &c) in split.train.iter().zip(&model.assignments) {
        clusters[i] = c;
    }
    for (&i, &c) in held_out.iter().zip(&routed) {
        clusters[i] = c;
    }

    let input = ComparisonInput { x: matrix.values.view(), y: &matrix.target, clusters: &clusters, k: model.k, split: &split };
    let report = run_comparison(input, &cfg.comparison)?;
    Ok(Experiment { matrix, split, sdesc: model, summary, map, clusters, report, config: cfg })
}

/// Per-cluster regressors trained on every row of each cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModels {
    pub models: BTreeMap<usize, RegressorModel>,
    pub plan: Option<TransferPlan>,
    pub steps: Vec<ChainStep>,
    /// Cluster and message of the step that stopped the chain.
    pub failure: Option<(usize, String)>,
}

/// Transfer chain over the clusters (similarity from each cluster's own rows),
/// or independent scratch models when transfer is off.
pub fn train_cluster_models(
    x: ArrayView2<f64>,
    y: &[f64],
    assignments: &[usize],
    k: usize,
    cfg: &ComparisonConfig,
) -> Result<ClusterModels> {
    if y.len() != x.nrows() || assignments.len() != x.nrows() {
        return Err(Error::InvalidInput("rows, targets and assignments differ in length".into()));
    }
    let arch = MlpArchitecture::new(x.ncols(), cfg.hidden_sizes.clone())?;
    let tasks: BTreeMap<usize, TaskData> = (0..k)
        .filter_map(|c| {
            let rows: Vec<usize> = (0..x.nrows()).filter(|&i| assignments[i] == c).collect();
            (!rows.is_empty()).then(|| {
                (c, TaskData { train_x: x.select(Axis(0), &rows), train_y: rows.iter().map(|&i| y[i]).collect() })
            })
        })
        .collect();
    if !cfg.transfer || tasks.len() < 2 {
        let mut models = BTreeMap::new();
        for (&c, t) in &tasks {
            models.insert(c, train_lm(&arch, t.train_x.view(), &t.train_y, &cfg.lm, None)?);
        }
        return Ok(ClusterModels { models, plan: None, steps: Vec::new(), failure: None });
    }
    let ids: Vec<usize> = tasks.keys().copied().collect();
    let views: Vec<ArrayView2<f64>> = ids.iter().map(|c| tasks[c].train_x.view()).collect();
    let sizes: Vec<usize> = ids.iter().map(|c| tasks[c].train_y.len()).collect();
    let plan = plan_transfer(&ids, &views, &sizes, cfg.filter_percentile)?;
    let chain = train_chain(&plan, &tasks, &arch, &cfg.lm)?;
    Ok(ClusterModels { models: chain.models, plan: Some(plan), steps: chain.steps, failure: chain.failure })
}
