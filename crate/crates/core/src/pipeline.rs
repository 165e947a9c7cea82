//! The coupled two-stage model.
//!
//! 1. Nonnegative CPD of the pre-disruption tensor `X1 = [[A1, B1, C1]]`,
//!    and a forecaster `f1` on the rows of `C1`.
//! 2. `f1` is rolled forward over the disrupted weeks to give the seasonal
//!    projection `X̃1 = [[A1, B1, C̃1]]`.
//! 3. The residual `ΔX2 = X2 − X̃1` (on features both tensors share) gets an
//!    unconstrained CPD `[[A2, B2, C2]]` and a forecaster `f2` on `C2`.
//! 4. The forecast is the seasonal rollout continued past the training end
//!    plus `[[A2, B2, f2(C2)]]`.
//!
//! Everything runs on data min-max scaled per (location, feature) fiber
//! with statistics from the pre-disruption weeks.

use serde::{Deserialize, Serialize};

use crate::data::{split_at, FeatureRole, PanelDataset};
use crate::error::{Error, Result};
use crate::nncpd::{cpd_fit, CpdConfig};
use crate::temporal::{forecast, train_forecaster, Forecaster, ForecasterConfig};
use crate::tensor::{frobenius_norm, reconstruct, Dims, FactorSet, Tensor3};

/// Maps each disrupted-period feature to its pre-disruption counterpart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureAlignment {
    /// `map[j]` is the stage-1 feature index for stage-2 feature `j`, or
    /// `None` when the feature was not observed before the cut.
    pub map: Vec<Option<usize>>,
    pub stage1_features: usize,
}

impl FeatureAlignment {
    pub fn by_name(stage2: &[String], stage1: &[String]) -> Self {
        Self {
            map: stage2.iter().map(|n| stage1.iter().position(|m| m == n)).collect(),
            stage1_features: stage1.len(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).map(Some).collect(),
            stage1_features: n,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = vec![false; self.stage1_features];
        for &i in self.map.iter().flatten() {
            if i >= self.stage1_features {
                return Err(Error::contract(format!("alignment index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::contract(format!("alignment maps two features onto {i}")));
            }
        }
        Ok(())
    }

    /// `(stage-2 index, stage-1 index)` pairs.
    pub fn matched(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.map.iter().enumerate().filter_map(|(j, m)| m.map(|i| (j, i)))
    }
}

/// Per-(location, feature) min-max scaling `z = (x − min) / range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiberScaler {
    pub locations: usize,
    pub features: usize,
    pub min: Vec<f64>,
    pub range: Vec<f64>,
}

impl FiberScaler {
    /// Statistics from each fiber of `x`. A flat fiber takes its own
    /// magnitude as range (1 when it is all zeros), which keeps the
    /// transform homogeneous under positive rescaling.
    pub fn fit(x: &Tensor3) -> Self {
        let d = x.dims();
        let mut min = Vec::with_capacity(d.locations * d.features);
        let mut range = Vec::with_capacity(d.locations * d.features);
        for l in 0..d.locations {
            for m in 0..d.features {
                let (lo, hi) = fiber_bounds(x.fiber(l, m));
                min.push(lo);
                let magnitude = lo.abs().max(hi.abs());
                range.push(if hi - lo > 1e-12 * magnitude {
                    hi - lo
                } else if magnitude > 0.0 {
                    magnitude
                } else {
                    1.0
                });
            }
        }
        Self {
            locations: d.locations,
            features: d.features,
            min,
            range,
        }
    }

    /// Stage-2 feature space: matched features use the pre-disruption
    /// statistics, unmatched ones the statistics of `x2` itself.
    pub fn fit_aligned(x1: &Tensor3, x2: &Tensor3, alignment: &FeatureAlignment) -> Self {
        let s1 = Self::fit(x1);
        let s2 = Self::fit(x2);
        let d = x2.dims();
        let mut out = s2.clone();
        for l in 0..d.locations {
            for (j, i) in alignment.matched() {
                out.min[l * d.features + j] = s1.min[l * s1.features + i];
                out.range[l * d.features + j] = s1.range[l * s1.features + i];
            }
        }
        out
    }

    fn check(&self, x: &Tensor3, features: &[usize]) -> Result<()> {
        let d = x.dims();
        if d.locations != self.locations || d.features != features.len() || features.iter().any(|&f| f >= self.features)
        {
            return Err(Error::contract("scaler does not match tensor shape"));
        }
        Ok(())
    }

    /// Scales `x`, whose feature `m` corresponds to scaler feature `features[m]`.
    pub fn scale(&self, x: &Tensor3, features: &[usize]) -> Result<Tensor3> {
        self.check(x, features)?;
        Ok(Tensor3::from_fn(x.dims(), |l, m, t| {
            let i = l * self.features + features[m];
            (x.get(l, m, t) - self.min[i]) / self.range[i]
        }))
    }

    pub fn unscale(&self, z: &Tensor3, features: &[usize]) -> Result<Tensor3> {
        self.check(z, features)?;
        Ok(Tensor3::from_fn(z.dims(), |l, m, t| {
            let i = l * self.features + features[m];
            z.get(l, m, t) * self.range[i] + self.min[i]
        }))
    }
}

fn fiber_bounds(series: &[f64]) -> (f64, f64) {
    series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Hyperparameters for one CPD + forecaster stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub rank: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub restarts: usize,
    pub forecaster: ForecasterConfig,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            max_iters: 500,
            rel_tol: 1e-8,
            restarts: 3,
            forecaster: ForecasterConfig::default(),
        }
    }
}

impl StageConfig {
    fn cpd(&self, nonnegative: bool, seed: u64) -> CpdConfig {
        CpdConfig {
            rank: self.rank,
            nonnegative,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            restarts: self.restarts,
            seed,
        }
    }

    fn forecaster(&self, seed: u64) -> ForecasterConfig {
        ForecasterConfig {
            seed,
            ..self.forecaster.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomConfig {
    pub stage1: StageConfig,
    pub stage2: StageConfig,
    /// Every CPD initialisation and forecaster seed is derived from this.
    pub seed: u64,
}

impl Default for DecomConfig {
    fn default() -> Self {
        Self {
            stage1: StageConfig::default(),
            stage2: StageConfig {
                rank: 3,
                forecaster: ForecasterConfig {
                    ridge: 0.1,
                    ..ForecasterConfig::ar(8)
                },
                ..StageConfig::default()
            },
            seed: 0,
        }
    }
}

/// Seed offsets so the four random consumers never share a stream.
const SEED_STAGE1_CPD: u64 = 0;
const SEED_STAGE1_FORECASTER: u64 = 1;
const SEED_STAGE2_CPD: u64 = 2;
const SEED_STAGE2_FORECASTER: u64 = 3;

/// Fitted CPD plus the forecaster for its temporal factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub factors: FactorSet,
    pub forecaster: Forecaster,
    pub fit: f64,
    pub iters_run: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
}

impl Stage {
    fn fit(x: &Tensor3, cfg: &StageConfig, nonnegative: bool, seed: u64, forecaster_seed: u64) -> Result<Stage> {
        let cpd = cpd_fit(x, &cfg.cpd(nonnegative, seed))?;
        let forecaster = train_forecaster(&cpd.factors.c, &cfg.forecaster(forecaster_seed))?;
        Ok(Stage {
            factors: cpd.factors,
            forecaster,
            fit: cpd.fit,
            iters_run: cpd.iters_run,
            converged: cpd.converged,
            objective_trace: cpd.objective_trace,
        })
    }

    /// `horizon` future rows of the temporal factor.
    pub fn rollout(&self, horizon: usize) -> Result<crate::tensor::Matrix> {
        forecast(&self.forecaster, &self.factors.c, horizon)
    }

    /// `[[A, B, f(C)]]` over the next `horizon` weeks.
    pub fn project(&self, horizon: usize) -> Result<Tensor3> {
        if horizon == 0 {
            let d = self.factors.dims();
            return Ok(Tensor3::zeros(Dims::new(d.locations, d.features, 0)));
        }
        Ok(reconstruct(&self.factors.with_time_factor(self.rollout(horizon)?)?))
    }
}

/// Nonnegative CPD of the (scaled) pre-disruption tensor and `f1`.
pub fn fit_stage1(x1: &Tensor3, cfg: &StageConfig, seed: u64) -> Result<Stage> {
    if x1.min_value() < 0.0 {
        return Err(Error::precondition("stage-1 tensor must be nonnegative after scaling"));
    }
    Stage::fit(
        x1,
        cfg,
        true,
        seed.wrapping_add(SEED_STAGE1_CPD),
        seed.wrapping_add(SEED_STAGE1_FORECASTER),
    )
}

/// Unconstrained CPD of the residual tensor and `f2`.
pub fn fit_stage2(dx2: &Tensor3, cfg: &StageConfig, seed: u64) -> Result<Stage> {
    Stage::fit(
        dx2,
        cfg,
        false,
        seed.wrapping_add(SEED_STAGE2_CPD),
        seed.wrapping_add(SEED_STAGE2_FORECASTER),
    )
}

/// Seasonal projection `[[A1, B1, f1(C1)]]` for the `horizon` weeks after `C1`.
pub fn project_seasonal(stage1: &Stage, horizon: usize) -> Result<Tensor3> {
    if horizon == 0 {
        return Err(Error::precondition("seasonal projection horizon must be at least 1"));
    }
    stage1.project(horizon)
}

/// `ΔX2 = X2 − X̃1` on matched features; unmatched features pass through.
pub fn compute_residual(x2: &Tensor3, xtilde1: &Tensor3, align: &FeatureAlignment) -> Result<Tensor3> {
    align.validate()?;
    let (d2, d1) = (x2.dims(), xtilde1.dims());
    if d2.locations != d1.locations || d2.times != d1.times {
        return Err(Error::contract(format!(
            "residual needs equal location and time extents, got {}x{} and {}x{}",
            d2.locations, d2.times, d1.locations, d1.times
        )));
    }
    if align.map.len() != d2.features || align.stage1_features != d1.features {
        return Err(Error::contract("alignment does not match the feature counts"));
    }
    let mut out = x2.clone();
    for l in 0..d2.locations {
        for (j, i) in align.matched() {
            let base = xtilde1.fiber(l, i);
            for (v, b) in out.fiber_mut(l, j).iter_mut().zip(base) {
                *v -= b;
            }
        }
    }
    Ok(out)
}

/// Stage-1 tensor lifted into stage-2 feature space (zeros on unmatched features).
fn align_to_stage2(x: &Tensor3, align: &FeatureAlignment) -> Tensor3 {
    let d = x.dims();
    let dims = Dims::new(d.locations, align.map.len(), d.times);
    Tensor3::from_fn(dims, |l, j, t| align.map[j].map_or(0.0, |i| x.get(l, i, t)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomDiagnostics {
    pub stage1_fit: f64,
    pub stage2_fit: f64,
    /// `‖ΔX2‖ / ‖X2‖` over matched features, in scaled units.
    pub residual_norm_ratio: f64,
    pub stage1_objective_trace: Vec<f64>,
    pub stage2_objective_trace: Vec<f64>,
    pub stage1_loss_trace: Vec<f64>,
    pub stage2_loss_trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomModel {
    pub stage1: Stage,
    pub stage2: Stage,
    pub alignment: FeatureAlignment,
    /// Panel feature indices forming the stage-1 feature mode.
    pub stage1_features: Vec<usize>,
    /// Stage-2 feature indices whose forecasts are clipped at zero.
    pub count_features: Vec<usize>,
    pub scaler: FiberScaler,
    pub cut_index: usize,
    pub train_end: usize,
    pub config: DecomConfig,
    pub diagnostics: DecomDiagnostics,
}

impl DecomModel {
    /// Weeks between the cut and the end of training.
    pub fn disrupted_weeks(&self) -> usize {
        self.train_end - self.cut_index
    }

    /// Seasonal term for weeks `T..T+t0`, in scaled stage-2 feature space.
    pub fn seasonal_forecast(&self, t0: usize) -> Result<Tensor3> {
        let gap = self.disrupted_weeks();
        let full = self.stage1.project(gap + t0)?;
        Ok(align_to_stage2(&full.slice_time(gap, gap + t0)?, &self.alignment))
    }

    /// Residual term `[[A2, B2, f2(C2)]]` for weeks `T..T+t0`, scaled.
    pub fn residual_forecast(&self, t0: usize) -> Result<Tensor3> {
        self.stage2.project(t0)
    }

    /// Seasonal plus residual, scaled, before clipping.
    pub fn predict_scaled(&self, t0: usize) -> Result<Tensor3> {
        self.seasonal_forecast(t0)?.add(&self.residual_forecast(t0)?)
    }

    /// Forecast for the `t0` weeks after training, in original units,
    /// with count features clipped at zero.
    pub fn predict(&self, t0: usize) -> Result<Tensor3> {
        let features: Vec<usize> = (0..self.alignment.map.len()).collect();
        let mut out = self.scaler.unscale(&self.predict_scaled(t0)?, &features)?;
        clip_counts(&mut out, &self.count_features);
        Ok(out)
    }
}

pub(crate) fn clip_counts(x: &mut Tensor3, count_features: &[usize]) {
    let d = x.dims();
    for l in 0..d.locations {
        for &m in count_features {
            x.fiber_mut(l, m).iter_mut().for_each(|v| *v = v.max(0.0));
        }
    }
}

/// Full procedure on the panel's training range, split at its cut index.
pub fn fit_decom(dataset: &PanelDataset, cfg: &DecomConfig) -> Result<DecomModel> {
    dataset.validate()?;
    let parts = split_at(dataset, dataset.cut_index, dataset.train_end)?;
    let scaler = FiberScaler::fit_aligned(&parts.x1, &parts.x2, &parts.alignment);
    let x1 = scaler.scale(&parts.x1, &parts.x1_features)?;
    let all: Vec<usize> = (0..dataset.features.len()).collect();
    let x2 = scaler.scale(&parts.x2, &all)?;

    let stage1 = fit_stage1(&x1, &cfg.stage1, cfg.seed)?;
    let gap = parts.end_index - parts.cut_index;
    let xtilde1 = project_seasonal(&stage1, gap)?;
    let dx2 = compute_residual(&x2, &xtilde1, &parts.alignment)?;
    let stage2 = fit_stage2(&dx2, &cfg.stage2, cfg.seed)?;

    let matched: Vec<usize> = parts.alignment.matched().map(|(j, _)| j).collect();
    let residual_norm_ratio = {
        let num = frobenius_norm(&dx2.select_features(&matched)?);
        let den = frobenius_norm(&x2.select_features(&matched)?);
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    };
    let diagnostics = DecomDiagnostics {
        stage1_fit: stage1.fit,
        stage2_fit: stage2.fit,
        residual_norm_ratio,
        stage1_objective_trace: stage1.objective_trace.clone(),
        stage2_objective_trace: stage2.objective_trace.clone(),
        stage1_loss_trace: stage1.forecaster.loss_trace.clone(),
        stage2_loss_trace: stage2.forecaster.loss_trace.clone(),
    };
    let count_features = dataset
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| f.role == FeatureRole::Count)
        .map(|(i, _)| i)
        .collect();
    Ok(DecomModel {
        stage1,
        stage2,
        alignment: parts.alignment,
        stage1_features: parts.x1_features,
        count_features,
        scaler,
        cut_index: parts.cut_index,
        train_end: parts.end_index,
        config: cfg.clone(),
        diagnostics,
    })
}
