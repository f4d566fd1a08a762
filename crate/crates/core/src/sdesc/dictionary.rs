//! Density-based dictionary selection.
//!
//! Points are visited in input order. A point with more than `gamma` other
//! points within distance `xi` is a core point; everything density-reachable
//! from a core point joins its group, and every group contributes its mean as
//! one atom. Noise points contribute nothing.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AtomSource {
    DensityCentroid,
    /// Supplied directly by the caller rather than found by the density pass.
    Given,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dictionary {
    /// `p × n`, one atom per row.
    pub atoms: Array2<f64>,
    pub source: AtomSource,
    /// Number of samples in each atom's density group (empty for given atoms).
    pub group_sizes: Vec<usize>,
    /// Samples the density pass left as noise.
    pub noise: usize,
}

impl Dictionary {
    pub fn from_atoms(atoms: Array2<f64>) -> Result<Self> {
        if atoms.nrows() == 0 {
            return Err(Error::InvalidInput("a dictionary needs at least one atom".into()));
        }
        Ok(Dictionary { atoms, source: AtomSource::Given, group_sizes: Vec::new(), noise: 0 })
    }

    pub fn p(&self) -> usize {
        self.atoms.nrows()
    }

    /// Scales every atom whose Euclidean norm exceeds `bound` back onto the bound.
    pub fn enforce_norm_bound(&mut self, bound: f64) {
        for mut atom in self.atoms.rows_mut() {
            let norm = atom.dot(&atom).sqrt();
            if norm > bound {
                atom *= bound / norm;
            }
        }
    }

    pub fn max_atom_norm(&self) -> f64 {
        self.atoms.rows().into_iter().map(|a| a.dot(&a).sqrt()).fold(0.0, f64::max)
    }
}

pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Range queries over points sorted by their projection on the leading
/// principal direction. Projections are 1-Lipschitz, so the window
/// `[proj - r, proj + r]` contains every point within distance `r`.
struct ProjectionIndex<'a> {
    x: ArrayView2<'a, f64>,
    proj: Vec<f64>,
    order: Vec<usize>,
    sorted_proj: Vec<f64>,
}

impl<'a> ProjectionIndex<'a> {
    fn new(x: ArrayView2<'a, f64>) -> Self {
        let dir = leading_direction(x);
        let proj: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&dir)).collect();
        let mut order: Vec<usize> = (0..x.nrows()).collect();
        order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
        let sorted_proj = order.iter().map(|&i| proj[i]).collect();
        ProjectionIndex { x, proj, order, sorted_proj }
    }

    fn neighbors(&self, i: usize, radius: f64, out: &mut Vec<usize>) {
        out.clear();
        let lo = self.sorted_proj.partition_point(|&p| p < self.proj[i] - radius);
        let hi = self.sorted_proj.partition_point(|&p| p <= self.proj[i] + radius);
        let r2 = radius * radius;
        let xi = self.x.row(i);
        for &j in &self.order[lo..hi] {
            if j != i && sq_dist(xi, self.x.row(j)) <= r2 {
                out.push(j);
            }
        }
    }
}

/// Power iteration for the top principal axis of the centered data.
fn leading_direction(x: ArrayView2<f64>) -> ndarray::Array1<f64> {
    let n = x.ncols();
    let mean = x.mean_axis(ndarray::Axis(0)).unwrap_or_else(|| ndarray::Array1::zeros(n));
    let mut v = ndarray::Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    for _ in 0..30 {
        let mut next = ndarray::Array1::<f64>::zeros(n);
        for row in x.rows() {
            let c = &row - &mean;
            next.scaled_add(c.dot(&v), &c);
        }
        let norm = next.dot(&next).sqrt();
        if norm <= f64::EPSILON {
            break;
        }
        v = next / norm;
    }
    v
}

const UNVISITED: usize = usize::MAX;
const NOISE: usize = usize::MAX - 1;

/// Group label per sample (`None` = noise) from the density pass.
pub fn density_groups(x: ArrayView2<f64>, gamma: usize, xi: f64) -> Vec<Option<usize>> {
    let m = x.nrows();
    let index = ProjectionIndex::new(x);
    let mut label = vec![UNVISITED; m];
    let mut groups = 0usize;
    let mut nbrs = Vec::new();
    let mut inner = Vec::new();
    let mut queue = Vec::new();
    for i in 0..m {
        if label[i] != UNVISITED {
            continue;
        }
        index.neighbors(i, xi, &mut nbrs);
        if nbrs.len() <= gamma {
            label[i] = NOISE;
            continue;
        }
        let g = groups;
        groups += 1;
        label[i] = g;
        queue.clear();
        queue.extend_from_slice(&nbrs);
        while let Some(q) = queue.pop() {
            match label[q] {
                NOISE => label[q] = g,
                UNVISITED => {
                    label[q] = g;
                    index.neighbors(q, xi, &mut inner);
                    if inner.len() > gamma {
                        queue.extend(inner.iter().copied().filter(|&r| label[r] == UNVISITED || label[r] == NOISE));
                    }
                }
                _ => {}
            }
        }
    }
    label.into_iter().map(|l| (l < NOISE).then_some(l)).collect()
}

pub fn select_dictionary(x: ArrayView2<f64>, gamma: usize, xi: f64) -> Result<Dictionary> {
    let (m, n) = x.dim();
    if gamma == 0 || !(xi > 0.0) {
        return Err(Error::Config(format!("need gamma >= 1 and xi > 0, got gamma={gamma}, xi={xi}")));
    }
    if m < gamma {
        return Err(Error::InvalidInput(format!("{m} samples is fewer than gamma={gamma}")));
    }
    let labels = density_groups(x, gamma, xi);
    let p = labels.iter().flatten().max().map_or(0, |g| g + 1);
    if p == 0 {
        return Err(Error::InvalidInput(format!(
            "density pass found no core points (gamma={gamma}, xi={xi}); increase xi or decrease gamma"
        )));
    }
    if p > m / 2 {
        return Err(Error::InvalidInput(format!(
            "density pass produced {p} atoms for {m} samples (limit m/2); increase xi or gamma"
        )));
    }
    let mut atoms = Array2::<f64>::zeros((p, n));
    let mut sizes = vec![0usize; p];
    for (row, label) in x.rows().into_iter().zip(&labels) {
        if let Some(g) = *label {
            let mut atom = atoms.row_mut(g);
            atom += &row;
            sizes[g] += 1;
        }
    }
    for (mut atom, &s) in atoms.rows_mut().into_iter().zip(&sizes) {
        atom /= s as f64;
    }
    let noise = labels.iter().filter(|l| l.is_none()).count();
    Ok(Dictionary { atoms, source: AtomSource::DensityCentroid, group_sizes: sizes, noise })
}

/// Radius heuristic: the `quantile` of each sample's distance to its
/// `(gamma + 1)`-th nearest neighbour, estimated on up to `sample` rows.
pub fn suggest_xi(x: ArrayView2<f64>, gamma: usize, quantile: f64, sample: usize, seed: u64) -> Result<f64> {
    use rand::seq::index;
    let m = x.nrows();
    if m <= gamma + 1 {
        return Err(Error::InvalidInput(format!("{m} samples is too few to size xi for gamma={gamma}")));
    }
    let mut rng = crate::seed::derived_rng(seed, "suggest-xi");
    let picks = index::sample(&mut rng, m, sample.min(m)).into_vec();
    let mut kth: Vec<f64> = picks
        .iter()
        .map(|&i| {
            let mut d: Vec<f64> = (0..m).filter(|&j| j != i).map(|j| sq_dist(x.row(i), x.row(j))).collect();
            let k = (gamma + 1).min(d.len()) - 1;
            *d.select_nth_unstable_by(k, f64::total_cmp).1
        })
        .collect();
    kth.sort_by(f64::total_cmp);
    let pos = ((kth.len() - 1) as f64 * quantile.clamp(0.0, 1.0)).round() as usize;
    let xi = kth[pos].sqrt();
    if xi > 0.0 {
        Ok(xi)
    } else {
        Err(Error::InvalidInput("too many duplicate samples to size xi".into()))
    }
}
