#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use restoretime::features::Coinciding;
use restoretime::ingest::{clean, join_weather, WeatherCondition, WeatherObs, DEFAULT_CEILING_MIN};
use restoretime::seed;
use restoretime::synth::{generate, SynthDataset, SynthSpec};
use restoretime::{CleanOutage, OutageRecord};

/// Active outages at each start time by direct pairwise check on `[start, end)`.
pub fn brute_coinciding(iv: &[(i64, i64, u64)]) -> Vec<Coinciding> {
    iv.iter()
        .map(|&(t, _, _)| {
            let mut c = Coinciding::default();
            for &(s, e, n) in iv {
                if s <= t && t < e {
                    c.outages += 1;
                    c.customers += n;
                }
            }
            c
        })
        .collect()
}

/// Intervals on a coarse grid so shared start and end times are common.
pub fn random_intervals(m: usize, seed: u64) -> Vec<(i64, i64, u64)> {
    let mut rng = seed::rng(seed);
    (0..m)
        .map(|_| {
            let s = 60 * rng.random_range(0..200i64);
            (s, s + 60 * rng.random_range(1..40i64), rng.random_range(1..1000))
        })
        .collect()
}

pub fn record(id: usize, start: i64, end: i64, customers: u64) -> OutageRecord {
    OutageRecord {
        outage: CleanOutage {
            id,
            start_time: start,
            end_time: end,
            customers_interrupted: customers,
            repair_time_min: 1.0,
            restoration_time_min: ((end - start) / 60) as f64,
            cause_key: 1,
            equipment_cause_key: 1,
            location_id: "L".into(),
            circuit_id: "C".into(),
        },
        weather: WeatherObs { temp: 10.0, precip: 0.0, wind: 5.0, condition: WeatherCondition::Normal },
    }
}

/// `per` points around each corner of the unit square, interleaved.
pub fn blobs(per: usize, sigma: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut rng = seed::rng(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let corners = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
    let mut x = Array2::zeros((4 * per, 2));
    let mut labels = Vec::with_capacity(4 * per);
    for i in 0..4 * per {
        let c = i % 4;
        x[[i, 0]] = corners[c][0] + noise.sample(&mut rng);
        x[[i, 1]] = corners[c][1] + noise.sample(&mut rng);
        labels.push(c);
    }
    (x, labels)
}

/// Full spectral clustering on the raw points: self-tuning Gaussian affinity
/// (scale = distance to the 7th neighbour), top-k eigenvectors of
/// D^-1/2 W D^-1/2, row normalization, then leader grouping of the rows.
pub fn exact_spectral(x: &Array2<f64>, k: usize) -> Vec<usize> {
    let m = x.nrows();
    let d = |i: usize, j: usize| ((x[[i, 0]] - x[[j, 0]]).powi(2) + (x[[i, 1]] - x[[j, 1]]).powi(2)).sqrt();
    let scale: Vec<f64> = (0..m)
        .map(|i| {
            let mut v: Vec<f64> = (0..m).filter(|&j| j != i).map(|j| d(i, j)).collect();
            v.sort_by(f64::total_cmp);
            v[6]
        })
        .collect();
    let w = DMatrix::from_fn(m, m, |i, j| if i == j { 0.0 } else { (-d(i, j).powi(2) / (scale[i] * scale[j])).exp() });
    let deg: Vec<f64> = (0..m).map(|i| w.row(i).sum()).collect();
    let l = DMatrix::from_fn(m, m, |i, j| w[(i, j)] / (deg[i] * deg[j]).sqrt());
    let eig = SymmetricEigen::new(l);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let rows: Vec<Vec<f64>> = (0..m)
        .map(|i| {
            let r: Vec<f64> = order[..k].iter().map(|&c| eig.eigenvectors[(i, c)]).collect();
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| v / n).collect()
        })
        .collect();
    let mut leaders: Vec<usize> = Vec::new();
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let dist = |l: usize| r.iter().zip(&rows[l]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            match leaders.iter().position(|&l| dist(l) < 0.5) {
                Some(c) => c,
                None => {
                    leaders.push(i);
                    leaders.len() - 1
                }
            }
        })
        .collect()
}

/// Synthetic benchmark run through cleaning and the weather join, with the
/// true cluster of every kept record.
pub fn benchmark(rows: usize, seed: u64) -> (SynthDataset, Vec<OutageRecord>, Vec<usize>) {
    let spec = SynthSpec { rows: Some(rows), seed, ..Default::default() };
    let data = generate(&spec).unwrap();
    let cleaned = clean(&data.rows, DEFAULT_CEILING_MIN).unwrap();
    let joined = join_weather(&cleaned.retained, &data.weather).unwrap();
    let truth_of: std::collections::HashMap<usize, usize> = data.labels.iter().map(|l| (l.line, l.cluster)).collect();
    let truth = joined.records.iter().map(|r| truth_of[&r.outage.id]).collect();
    (data, joined.records, truth)
}
