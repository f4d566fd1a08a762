//! Sparse dictionary-based ensemble spectral clustering.
//!
//! Density pass → dictionary atoms → kernel sparse codes → spectral embedding
//! (dense reference or landmark) → k-means for every candidate k, keeping the
//! k with the lowest Davies–Bouldin index.

pub mod dbi;
pub mod dictionary;
pub mod encode;
pub mod kmeans;
pub mod spectral;

use log::{debug, info, warn};
use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dbi::{adjusted_rand_index, davies_bouldin};
pub use dictionary::{select_dictionary, AtomSource, Dictionary};
pub use encode::{encode, Bandwidth, SparseCodes};
pub use kmeans::{kmeans, KMeansConfig, KMeansResult};
pub use spectral::{
    adjacency_reference, landmark_basis, reference_basis, spectral_embed_landmark, spectral_embed_reference,
    SpectralBasis,
};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpectralPath {
    Reference,
    Landmark,
}

impl std::str::FromStr for SpectralPath {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reference" => Ok(SpectralPath::Reference),
            "landmark" => Ok(SpectralPath::Landmark),
            other => Err(Error::Config(format!("unknown spectral path `{other}` (expected reference or landmark)"))),
        }
    }
}

/// Density radius: fixed, or searched so the dictionary lands near a target
/// size while leaving at most `max_noise` of the samples as noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum XiChoice {
    Fixed(f64),
    Auto { target_atoms: usize, max_noise: f64 },
}

impl XiChoice {
    pub const DEFAULT_AUTO: XiChoice = XiChoice::Auto { target_atoms: 64, max_noise: 0.1 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdescConfig {
    pub gamma: usize,
    pub xi: XiChoice,
    pub kernel_bandwidth: Bandwidth,
    /// Neighbour index for the self-tuning adjacency scale.
    pub beta: usize,
    pub s_nonzeros: usize,
    pub k_min: usize,
    pub k_max: usize,
    /// Atom norm bound; `None` leaves atoms as found.
    pub norm_bound: Option<f64>,
    pub path: SpectralPath,
    pub normalize_rows: bool,
    pub kmeans_restarts: usize,
    pub seed: u64,
}

impl Default for SdescConfig {
    fn default() -> Self {
        SdescConfig {
            gamma: 5,
            xi: XiChoice::DEFAULT_AUTO,
            kernel_bandwidth: Bandwidth::Median,
            beta: 7,
            s_nonzeros: 5,
            k_min: 2,
            k_max: 8,
            norm_bound: None,
            path: SpectralPath::Landmark,
            normalize_rows: true,
            kmeans_restarts: 20,
            seed: 0,
        }
    }
}

impl SdescConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma == 0 || self.beta == 0 {
            return Err(Error::Config("gamma and beta must be at least 1".into()));
        }
        if self.s_nonzeros < 2 {
            return Err(Error::Config(format!("s_nonzeros must be at least 2, got {}", self.s_nonzeros)));
        }
        if self.k_min < 2 || self.k_max < self.k_min {
            return Err(Error::Config(format!("k range {}..{} must satisfy 2 <= min <= max", self.k_min, self.k_max)));
        }
        match self.xi {
            XiChoice::Fixed(xi) if !(xi > 0.0) => return Err(Error::Config(format!("xi must be positive, got {xi}"))),
            XiChoice::Auto { target_atoms, max_noise } if target_atoms == 0 || !(0.0..=1.0).contains(&max_noise) => {
                return Err(Error::Config("target atom count must be positive and max_noise in [0, 1]".into()))
            }
            _ => {}
        }
        if let Some(c) = self.norm_bound {
            if !(c > 0.0) {
                return Err(Error::Config(format!("norm bound must be positive, got {c}")));
            }
        }
        if let Bandwidth::Fixed(s) = self.kernel_bandwidth {
            if !(s > 0.0) {
                return Err(Error::Config(format!("kernel bandwidth must be positive, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdescModel {
    pub dictionary: Dictionary,
    pub codes: SparseCodes,
    /// `m × k`, the embedding the final k-means ran on.
    pub embedding: Array2<f64>,
    pub k: usize,
    pub dbi_curve: Vec<(usize, f64)>,
    pub assignments: Vec<usize>,
    pub centroids: Array2<f64>,
    pub config: SdescConfig,
    /// Radius actually used by the density pass (`None` for given atoms).
    pub xi_used: Option<f64>,
}

impl SdescModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Renames cluster `c` to `new_id[c]`.
    pub fn relabel(&mut self, new_id: &[usize]) -> Result<()> {
        let mut seen = vec![false; self.k];
        if new_id.len() != self.k || new_id.iter().any(|&c| c >= self.k || std::mem::replace(&mut seen[c], true)) {
            return Err(Error::InvalidInput(format!("relabeling must be a permutation of 0..{}", self.k)));
        }
        for a in &mut self.assignments {
            *a = new_id[*a];
        }
        let old = self.centroids.clone();
        for (c, &n) in new_id.iter().enumerate() {
            self.centroids.row_mut(n).assign(&old.row(c));
        }
        Ok(())
    }
}

/// Outcome of the k sweep.
#[derive(Debug, Clone)]
pub struct KSelection {
    pub k: usize,
    pub dbi_curve: Vec<(usize, f64)>,
    pub embedding: Array2<f64>,
    pub clustering: KMeansResult,
}

/// Embeds with each k in `k_min..=k_max`, clusters, scores by Davies–Bouldin
/// and keeps the minimum (ties go to the smaller k). A k whose embedding or
/// clustering fails is skipped.
pub fn select_k_and_cluster<F>(embed: F, k_min: usize, k_max: usize, km: &KMeansConfig) -> Result<KSelection>
where
    F: Fn(usize) -> Result<Array2<f64>> + Sync,
{
    if k_min < 2 || k_max < k_min {
        return Err(Error::Config(format!("k range {k_min}..{k_max} must satisfy 2 <= min <= max")));
    }
    let trials: Vec<(usize, Result<(Array2<f64>, KMeansResult, f64)>)> = (k_min..=k_max)
        .into_par_iter()
        .map(|k| {
            let run = || -> Result<_> {
                let e = embed(k)?;
                if k >= e.nrows() {
                    return Err(Error::InvalidInput(format!("k={k} needs more than {} samples", e.nrows())));
                }
                let cfg = KMeansConfig { seed: seed::derive(km.seed, &format!("k={k}")), ..*km };
                let clustering = kmeans(e.view(), k, &cfg)?;
                let score = davies_bouldin(e.view(), &clustering.assignments, k)?;
                Ok((e, clustering, score))
            };
            (k, run())
        })
        .collect();
    let mut best: Option<(usize, Array2<f64>, KMeansResult, f64)> = None;
    let mut curve = Vec::new();
    let mut last_err = None;
    for (k, trial) in trials {
        match trial {
            Ok((e, c, score)) => {
                debug!("k={k}: DBI {score:.6}");
                curve.push((k, score));
                if best.as_ref().is_none_or(|b| score < b.3) {
                    best = Some((k, e, c, score));
                }
            }
            Err(err) => {
                warn!("skipping k={k}: {err}");
                last_err = Some(err);
            }
        }
    }
    match best {
        Some((k, embedding, clustering, _)) => Ok(KSelection { k, dbi_curve: curve, embedding, clustering }),
        None => Err(last_err.unwrap_or_else(|| Error::Numerical("no k could be embedded".into()))),
    }
}

/// Grid search over radii for the dictionary whose size is closest (in ratio)
/// to `target` while respecting the `m/2` cap.
/// Tries radii on a geometric grid around the median `gamma`-neighbour
/// distance. Radii leaving more than `max_noise` of the samples as noise rank
/// after all others (by noise); the rest rank by how close their atom count is
/// to `target` in ratio.
fn auto_dictionary(x: ArrayView2<f64>, gamma: usize, target: usize, max_noise: f64, seed: u64) -> Result<(Dictionary, f64)> {
    let m = x.nrows();
    let base = dictionary::suggest_xi(x, gamma, 0.5, 2000, seed)?;
    let mut best: Option<((bool, f64), Dictionary, f64)> = None;
    for step in -8..=6 {
        let xi = base * 2f64.powf(step as f64 / 2.0);
        let dict = match select_dictionary(x, gamma, xi) {
            Ok(d) => d,
            Err(_) => continue,
        };
        let noise = dict.noise as f64 / m as f64;
        let key = if noise <= max_noise { (false, ((dict.p() as f64) / target as f64).ln().abs()) } else { (true, noise) };
        debug!("xi={xi:.4}: {} atoms, {} noise", dict.p(), dict.noise);
        if best.as_ref().is_none_or(|b| key.0 < b.0.0 || (key.0 == b.0.0 && key.1 < b.0.1)) {
            best = Some((key, dict, xi));
        }
    }
    best.map(|(_, d, xi)| (d, xi)).ok_or_else(|| {
        Error::InvalidInput(format!(
            "no density radius produced a usable dictionary for {m} samples with gamma={gamma}; set xi explicitly"
        ))
    })
}

/// Full fit: density dictionary, codes, embedding, k sweep.
pub fn fit(x: ArrayView2<f64>, cfg: &SdescConfig) -> Result<SdescModel> {
    cfg.validate()?;
    if x.nrows() < cfg.gamma {
        return Err(Error::InvalidInput(format!("{} samples is fewer than gamma={}", x.nrows(), cfg.gamma)));
    }
    let (dict, xi) = match cfg.xi {
        XiChoice::Fixed(xi) => (select_dictionary(x, cfg.gamma, xi)?, xi),
        XiChoice::Auto { target_atoms, max_noise } => auto_dictionary(x, cfg.gamma, target_atoms, max_noise, cfg.seed)?,
    };
    info!("dictionary: {} atoms (xi={xi:.4}, {} noise samples)", dict.p(), dict.noise);
    let mut model = fit_with_dictionary(x, dict, cfg)?;
    model.xi_used = Some(xi);
    Ok(model)
}

/// Fit with caller-supplied atoms, skipping the density pass.
pub fn fit_with_dictionary(x: ArrayView2<f64>, mut dict: Dictionary, cfg: &SdescConfig) -> Result<SdescModel> {
    cfg.validate()?;
    let m = x.nrows();
    if cfg.k_max >= m {
        return Err(Error::Config(format!("k range upper bound {} must be below the sample count {m}", cfg.k_max)));
    }
    if let Some(c) = cfg.norm_bound {
        dict.enforce_norm_bound(c);
    }
    let s = cfg.s_nonzeros.min(dict.p());
    if s < cfg.s_nonzeros {
        warn!("dictionary has {} atoms; keeping {s} nonzeros per code", dict.p());
    }
    let codes = encode(x, &dict, s, cfg.kernel_bandwidth)?;
    let basis = match cfg.path {
        SpectralPath::Reference => {
            let w = adjacency_reference(codes.to_dense().view(), cfg.beta)?;
            reference_basis(w.view(), (cfg.k_max + 1).min(m))?
        }
        SpectralPath::Landmark => landmark_basis(&codes, (cfg.k_max + 1).min(dict.p()))?,
    };
    let km = KMeansConfig { restarts: cfg.kmeans_restarts, seed: seed::derive(cfg.seed, "sdesc-kmeans"), ..Default::default() };
    let sel = match select_k_and_cluster(|k| basis.embedding(k, cfg.normalize_rows), cfg.k_min, cfg.k_max, &km) {
        Ok(sel) => sel,
        Err(e) => {
            warn!("no k in range has a well-separated eigengap ({e}); retrying without the gap check");
            select_k_and_cluster(|k| basis.embedding_checked(k, cfg.normalize_rows, false), cfg.k_min, cfg.k_max, &km)?
        }
    };
    info!("selected k={} from DBI curve {:?}", sel.k, sel.dbi_curve);
    Ok(SdescModel {
        dictionary: dict,
        codes,
        embedding: sel.embedding,
        k: sel.k,
        dbi_curve: sel.dbi_curve,
        assignments: sel.clustering.assignments,
        centroids: sel.clustering.centroids,
        config: cfg.clone(),
        xi_used: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster: usize,
    pub count: usize,
    pub avg_customers: f64,
    pub avg_restoration_min: f64,
}

/// Per-cluster count and means, ordered by descending mean restoration time.
pub fn assign_summary(assignments: &[usize], k: usize, customers: &[f64], restoration: &[f64]) -> Result<Vec<ClusterSummary>> {
    if assignments.len() != customers.len() || assignments.len() != restoration.len() {
        return Err(Error::InvalidInput("summary inputs must have one entry per sample".into()));
    }
    let mut rows: Vec<ClusterSummary> =
        (0..k).map(|c| ClusterSummary { cluster: c, count: 0, avg_customers: 0.0, avg_restoration_min: 0.0 }).collect();
    for ((&c, &ci), &rt) in assignments.iter().zip(customers).zip(restoration) {
        if c >= k {
            return Err(Error::InvalidInput(format!("cluster id {c} out of range for k={k}")));
        }
        rows[c].count += 1;
        rows[c].avg_customers += ci;
        rows[c].avg_restoration_min += rt;
    }
    for r in &mut rows {
        if r.count > 0 {
            r.avg_customers /= r.count as f64;
            r.avg_restoration_min /= r.count as f64;
        }
    }
    rows.sort_by(|a, b| b.avg_restoration_min.total_cmp(&a.avg_restoration_min).then(a.cluster.cmp(&b.cluster)));
    Ok(rows)
}

/// Permutation mapping old cluster ids to ranks by descending mean restoration time.
pub fn order_by_restoration(assignments: &[usize], k: usize, restoration: &[f64]) -> Vec<usize> {
    let zeros = vec![0.0; assignments.len()];
    let summary = assign_summary(assignments, k, &zeros, restoration).expect("consistent lengths");
    let mut new_id = vec![0; k];
    for (rank, row) in summary.iter().enumerate() {
        new_id[row.cluster] = rank;
    }
    new_id
}
