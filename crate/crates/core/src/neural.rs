//! Feed-forward regressor with sigmoid hidden layers and a linear output,
//! trained by Levenberg–Marquardt on the full batch.
//!
//! Parameters are one flat vector, layer by layer: the `out × in` weight
//! matrix in row-major order, then the `out` biases. The output layer has a
//! single unit. Targets are standardized before training and the network
//! predicts in standardized units; [`RegressorModel::predict_row`] maps back.

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use ndarray::ArrayView2;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_sizes: Vec<usize>) -> Result<Self> {
        if input_dim == 0 || hidden_sizes.is_empty() || hidden_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "architecture needs input_dim >= 1 and at least one non-empty hidden layer, got {input_dim} -> {hidden_sizes:?}"
            )));
        }
        Ok(MlpArchitecture { input_dim, hidden_sizes })
    }

    /// `(out, in)` per layer, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_sizes.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in &self.hidden_sizes {
            shapes.push((h, fan_in));
            fan_in = h;
        }
        shapes.push((1, fan_in));
        shapes
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(o, i)| o * (i + 1)).sum()
    }

    /// Uniform in `±0.5/√fan_in` for weights, zero biases.
    pub fn random_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = seed::derived_rng(seed, "mlp-init");
        let mut params = Vec::with_capacity(self.n_params());
        for (out, fan_in) in self.layer_shapes() {
            let bound = 0.5 / (fan_in as f64).sqrt();
            for _ in 0..out * fan_in {
                params.push(rng.random_range(-bound..=bound));
            }
            params.extend(std::iter::repeat_n(0.0, out));
        }
        params
    }
}

pub fn sigmoid(y: f64) -> f64 {
    1.0 / (1.0 + (-y).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub mean: f64,
    pub std: f64,
}

impl TargetScale {
    pub fn fit(y: &[f64]) -> Self {
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        TargetScale { mean, std: if std > 0.0 && std.is_finite() { std } else { 1.0 } }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainedFrom {
    Scratch,
    Transfer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxEpochs,
    SseTolerance,
    GradientTolerance,
    DampingLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub trained_from: TrainedFrom,
    pub source_cluster: Option<usize>,
    /// Similarity used to scale the source parameters, when transferred.
    pub omega: Option<f64>,
    pub epochs_run: usize,
    /// Sum of squared residuals in standardized target units.
    pub final_sse: f64,
    pub stop: StopReason,
    /// SSE at the start and after every accepted step.
    pub sse_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorModel {
    pub architecture: MlpArchitecture,
    pub params: Vec<f64>,
    pub target_scale: TargetScale,
    pub provenance: Provenance,
}

/// Standardized-unit output for one input row.
pub fn network_output(arch: &MlpArchitecture, params: &[f64], x: &[f64]) -> f64 {
    let mut act: Vec<f64> = x.to_vec();
    let mut offset = 0;
    let shapes = arch.layer_shapes();
    let last = shapes.len() - 1;
    for (l, &(out, fan_in)) in shapes.iter().enumerate() {
        let w = &params[offset..offset + out * fan_in];
        let b = &params[offset + out * fan_in..offset + out * (fan_in + 1)];
        offset += out * (fan_in + 1);
        let next: Vec<f64> = (0..out)
            .map(|j| {
                let z = b[j] + w[j * fan_in..(j + 1) * fan_in].iter().zip(&act).map(|(a, b)| a * b).sum::<f64>();
                if l == last { z } else { sigmoid(z) }
            })
            .collect();
        act = next;
    }
    act[0]
}

/// Output and its gradient with respect to every parameter.
pub fn output_and_gradient(arch: &MlpArchitecture, params: &[f64], x: &[f64], grad: &mut [f64]) -> f64 {
    let shapes = arch.layer_shapes();
    let mut offsets = Vec::with_capacity(shapes.len());
    let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
    let mut offset = 0;
    for (l, &(out, fan_in)) in shapes.iter().enumerate() {
        offsets.push(offset);
        let w = &params[offset..offset + out * fan_in];
        let b = &params[offset + out * fan_in..offset + out * (fan_in + 1)];
        offset += out * (fan_in + 1);
        let prev = &acts[l];
        let next: Vec<f64> = (0..out)
            .map(|j| {
                let z = b[j] + w[j * fan_in..(j + 1) * fan_in].iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
                if l == shapes.len() - 1 { z } else { sigmoid(z) }
            })
            .collect();
        acts.push(next);
    }
    // delta[j] = d output / d pre-activation of unit j in the current layer.
    let mut delta = vec![1.0];
    for l in (0..shapes.len()).rev() {
        let (out, fan_in) = shapes[l];
        let off = offsets[l];
        let input = &acts[l];
        for j in 0..out {
            for i in 0..fan_in {
                grad[off + j * fan_in + i] = delta[j] * input[i];
            }
            grad[off + out * fan_in + j] = delta[j];
        }
        if l > 0 {
            let w = &params[off..off + out * fan_in];
            delta = (0..fan_in)
                .map(|i| {
                    let back: f64 = (0..out).map(|j| w[j * fan_in + i] * delta[j]).sum();
                    back * input[i] * (1.0 - input[i])
                })
                .collect();
        }
    }
    acts.last().expect("output layer")[0]
}

impl RegressorModel {
    /// Prediction in minutes for one standardized feature row.
    pub fn predict_row(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.architecture.input_dim {
            return Err(Error::InvalidInput(format!(
                "model expects {} features, got {}",
                self.architecture.input_dim,
                x.len()
            )));
        }
        let out = network_output(&self.architecture, &self.params, x);
        Ok(self.target_scale.mean + self.target_scale.std * out)
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<f64>> {
        x.rows().into_iter().map(|r| self.predict_row(&r.to_vec())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmConfig {
    pub lambda0: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Damping above which the run stops.
    pub lambda_max: f64,
    pub max_epochs: usize,
    /// Stop when an accepted step lowers SSE by less than this fraction.
    pub sse_tol: f64,
    /// Stop when the gradient norm `|Jᵀr|` falls below this.
    pub grad_tol: f64,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            lambda0: 1e-2,
            lambda_up: 10.0,
            lambda_down: 0.1,
            lambda_max: 1e10,
            max_epochs: 100,
            sse_tol: 1e-6,
            grad_tol: 1e-9,
            seed: 0,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda0 > 0.0
            && self.lambda_up > 1.0
            && self.lambda_down > 0.0
            && self.lambda_down < 1.0
            && self.lambda_max > self.lambda0
            && self.sse_tol > 0.0
            && self.grad_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid LM settings: {self:?}")))
        }
    }
}

fn sse_of(arch: &MlpArchitecture, params: &[f64], x: ArrayView2<f64>, y: &[f64]) -> f64 {
    x.rows().into_iter().zip(y).map(|(r, &t)| (t - network_output(arch, params, r.as_slice().unwrap())).powi(2)).sum()
}

/// Residuals and the Jacobian of the outputs, `m × P`.
fn jacobian(arch: &MlpArchitecture, params: &[f64], x: ArrayView2<f64>, y: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
    let (m, p) = (x.nrows(), params.len());
    let rows: Vec<(f64, Vec<f64>)> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut g = vec![0.0; p];
            let out = output_and_gradient(arch, params, x.row(i).as_slice().unwrap(), &mut g);
            (y[i] - out, g)
        })
        .collect();
    let r = DVector::from_iterator(m, rows.iter().map(|(r, _)| *r));
    let j = DMatrix::from_fn(m, p, |i, c| rows[i].1[c]);
    (r, j)
}

/// Levenberg–Marquardt on `½ Σ (y - ŷ)²` in standardized target units.
pub fn train_lm(
    arch: &MlpArchitecture,
    x: ArrayView2<f64>,
    y: &[f64],
    cfg: &LmConfig,
    init: Option<&[f64]>,
) -> Result<RegressorModel> {
    cfg.validate()?;
    let m = x.nrows();
    if x.ncols() != arch.input_dim {
        return Err(Error::InvalidInput(format!("rows have {} features, architecture expects {}", x.ncols(), arch.input_dim)));
    }
    if y.len() != m || m == 0 {
        return Err(Error::InvalidInput(format!("need one target per row and at least one row (rows={m}, targets={})", y.len())));
    }
    let n_params = arch.n_params();
    if m < n_params {
        warn!("{m} training rows for {n_params} parameters; the fit is underdetermined");
    }
    let x = x.as_standard_layout();
    let scale = TargetScale::fit(y);
    let ys: Vec<f64> = y.iter().map(|v| (v - scale.mean) / scale.std).collect();
    let mut params = match init {
        Some(p) if p.len() != n_params => {
            return Err(Error::InvalidInput(format!("initial vector has {} entries, architecture has {n_params}", p.len())))
        }
        Some(p) => p.to_vec(),
        None => arch.random_params(cfg.seed),
    };

    let mut lambda = cfg.lambda0;
    let mut sse = sse_of(arch, &params, x.view(), &ys);
    if !sse.is_finite() {
        return Err(Error::Numerical("initial loss is not finite".into()));
    }
    let mut history = vec![sse];
    let mut epochs = 0;
    let stop = loop {
        if epochs >= cfg.max_epochs {
            break StopReason::MaxEpochs;
        }
        let (r, j) = jacobian(arch, &params, x.view(), &ys);
        let g = j.tr_mul(&r);
        if g.norm() < cfg.grad_tol {
            break StopReason::GradientTolerance;
        }
        let jtj = j.tr_mul(&j);
        epochs += 1;
        let mut accepted = None;
        while lambda <= cfg.lambda_max {
            let mut a = jtj.clone();
            for d in 0..n_params {
                a[(d, d)] += lambda;
            }
            let Some(chol) = a.cholesky() else {
                lambda *= cfg.lambda_up;
                continue;
            };
            let delta = chol.solve(&g);
            let trial: Vec<f64> = params.iter().zip(delta.iter()).map(|(p, d)| p + d).collect();
            let trial_sse = sse_of(arch, &trial, x.view(), &ys);
            if trial_sse.is_finite() && trial_sse < sse {
                lambda = (lambda * cfg.lambda_down).max(f64::MIN_POSITIVE);
                accepted = Some((trial, trial_sse));
                break;
            }
            if !trial_sse.is_finite() {
                debug!("epoch {epochs}: non-finite trial loss at lambda={lambda:e}");
            }
            lambda *= cfg.lambda_up;
        }
        let Some((next, next_sse)) = accepted else {
            break StopReason::DampingLimit;
        };
        let drop = sse - next_sse;
        params = next;
        sse = next_sse;
        history.push(sse);
        if drop < cfg.sse_tol * history[history.len() - 2] {
            break StopReason::SseTolerance;
        }
    };
    if params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical(format!("parameters became non-finite after epoch {epochs}")));
    }
    debug!("LM stopped after {epochs} epochs ({stop:?}), SSE {sse:.6}");
    Ok(RegressorModel {
        architecture: arch.clone(),
        params,
        target_scale: scale,
        provenance: Provenance {
            trained_from: if init.is_some() { TrainedFrom::Transfer } else { TrainedFrom::Scratch },
            source_cluster: None,
            omega: None,
            epochs_run: epochs,
            final_sse: sse,
            stop,
            sse_history: history,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridTrial {
    pub hidden_sizes: Vec<usize>,
    pub lm_index: usize,
    pub n_params: usize,
    pub validation_mape: f64,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: RegressorModel,
    pub best_trial: usize,
    /// Every trial in grid order (architectures outer, LM settings inner).
    pub leaderboard: Vec<GridTrial>,
}

/// MAPE differences at or below this many percentage points count as ties.
pub const GRID_TIE_PCT: f64 = 1e-6;

/// Exhaustive search over `arch_grid × lm_grid`, scored by validation MAPE.
/// Ties go to fewer parameters, then to the earlier grid entry.
pub fn grid_search(
    input_dim: usize,
    arch_grid: &[Vec<usize>],
    lm_grid: &[LmConfig],
    train: (ArrayView2<f64>, &[f64]),
    validation: (ArrayView2<f64>, &[f64]),
) -> Result<GridResult> {
    if arch_grid.is_empty() || lm_grid.is_empty() {
        return Err(Error::Config("grid search needs at least one architecture and one LM setting".into()));
    }
    let mut cells = Vec::new();
    for hidden in arch_grid {
        let arch = MlpArchitecture::new(input_dim, hidden.clone())?;
        for (li, cfg) in lm_grid.iter().enumerate() {
            cells.push((arch.clone(), li, cfg.clone()));
        }
    }
    let results: Vec<Result<(RegressorModel, f64)>> = cells
        .par_iter()
        .map(|(arch, _, cfg)| {
            let model = train_lm(arch, train.0, train.1, cfg, None)?;
            let pred = model.predict(validation.0)?;
            let score = crate::eval::mape(validation.1, &pred)?.value;
            Ok((model, score))
        })
        .collect();
    let mut leaderboard = Vec::with_capacity(cells.len());
    let mut models = Vec::with_capacity(cells.len());
    for ((arch, li, _), res) in cells.iter().zip(results) {
        let (model, score) = res?;
        leaderboard.push(GridTrial {
            hidden_sizes: arch.hidden_sizes.clone(),
            lm_index: *li,
            n_params: arch.n_params(),
            validation_mape: score,
        });
        models.push(model);
    }
    let mut best = 0;
    for (i, t) in leaderboard.iter().enumerate().skip(1) {
        let b = &leaderboard[best];
        let better = if (t.validation_mape - b.validation_mape).abs() <= GRID_TIE_PCT {
            t.n_params < b.n_params
        } else {
            t.validation_mape < b.validation_mape
        };
        if better {
            best = i;
        }
    }
    Ok(GridResult { best: models.swap_remove(best), best_trial: best, leaderboard })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn zero_model(arch: MlpArchitecture) -> RegressorModel {
        let n = arch.n_params();
        RegressorModel {
            architecture: arch,
            params: vec![0.0; n],
            target_scale: TargetScale { mean: 0.0, std: 1.0 },
            provenance: Provenance {
                trained_from: TrainedFrom::Scratch,
                source_cluster: None,
                omega: None,
                epochs_run: 0,
                final_sse: 0.0,
                stop: StopReason::MaxEpochs,
                sse_history: vec![],
            },
        }
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn zero_network_predicts_zero() {
        let m = zero_model(MlpArchitecture::new(3, vec![4, 2]).unwrap());
        assert_eq!(m.predict_row(&[1.0, -2.0, 7.0]).unwrap(), 0.0);
        assert!(m.predict_row(&[1.0]).is_err());
    }

    #[test]
    fn single_hidden_unit_hand_value() {
        let mut m = zero_model(MlpArchitecture::new(2, vec![1]).unwrap());
        // Layout: w_h (2), b_h (1), w_out (1), b_out (1).
        m.params[3] = 2.0;
        assert_eq!(m.predict_row(&[5.0, -3.0]).unwrap(), 1.0);
    }

    #[test]
    fn parameter_count() {
        let a = MlpArchitecture::new(10, vec![16, 8]).unwrap();
        assert_eq!(a.n_params(), 16 * 11 + 8 * 17 + 9);
    }

    #[test]
    fn fits_linear_target() {
        let x = Array2::from_shape_fn((50, 1), |(i, _)| -1.0 + 2.0 * i as f64 / 49.0);
        let y: Vec<f64> = x.column(0).iter().map(|v| 3.0 * v).collect();
        let arch = MlpArchitecture::new(1, vec![4]).unwrap();
        let model = train_lm(&arch, x.view(), &y, &LmConfig { seed: 1, ..Default::default() }, None).unwrap();
        let scale = model.target_scale.std;
        let pred = model.predict(x.view()).unwrap();
        let rmse = (pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / 50.0).sqrt() / scale;
        assert!(rmse < 0.05, "rmse {rmse}");
        let h = &model.provenance.sse_history;
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn optimal_start_is_left_alone() {
        let arch = MlpArchitecture::new(1, vec![2]).unwrap();
        let params = arch.random_params(4);
        let x = Array2::from_shape_fn((20, 1), |(i, _)| i as f64 / 10.0 - 1.0);
        let raw: Vec<f64> = x.rows().into_iter().map(|r| network_output(&arch, &params, r.as_slice().unwrap())).collect();
        // Targets are the outputs themselves; fold their standardization
        // into the output layer so the start is an exact fit.
        let scale = TargetScale::fit(&raw);
        let mut tuned = params.clone();
        let n = tuned.len();
        tuned[n - 3] /= scale.std;
        tuned[n - 2] /= scale.std;
        tuned[n - 1] = (tuned[n - 1] - scale.mean) / scale.std;
        let model = train_lm(&arch, x.view(), &raw, &LmConfig::default(), Some(&tuned)).unwrap();
        assert_eq!(model.provenance.epochs_run, 0);
        assert_eq!(model.params, tuned);
    }
}
