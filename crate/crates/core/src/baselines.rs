//! Reference forecasters: single-stage tensor model, per-location recurrent
//! model, seasonal-naive copy and per-series autoregression.
//!
//! Every fitted model keeps the history it needs, so forecasting does not
//! need the training panel again.

use serde::{Deserialize, Serialize};

use crate::data::{FeatureRole, PanelDataset};
use crate::error::{Error, Result};
use crate::pipeline::{clip_counts, fit_stage1, FiberScaler, Stage, StageConfig};
use crate::temporal::{forecast, train_forecaster, Forecaster, ForecasterConfig};
use crate::tensor::{Dims, Matrix, Tensor3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub detensor: StageConfig,
    /// Forecaster used by the per-location model.
    pub per_location: ForecasterConfig,
    pub ar_window: usize,
    pub period: usize,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            detensor: StageConfig::default(),
            per_location: ForecasterConfig::default(),
            ar_window: 52,
            period: 52,
            seed: 0,
        }
    }
}

/// One nonnegative CPD over the whole training range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetensorModel {
    pub stage: Stage,
    pub scaler: FiberScaler,
    pub count_features: Vec<usize>,
}

impl DetensorModel {
    pub fn forecast(&self, horizon: usize) -> Result<Tensor3> {
        let features: Vec<usize> = (0..self.scaler.features).collect();
        let mut out = self.scaler.unscale(&self.stage.project(horizon)?, &features)?;
        clip_counts(&mut out, &self.count_features);
        Ok(out)
    }
}

/// DeTensor on an arbitrary tensor. Uses the stage-1 code path, so with the
/// same seed it reproduces that stage exactly.
pub fn fit_detensor_tensor(x: &Tensor3, count_features: &[usize], cfg: &StageConfig, seed: u64) -> Result<DetensorModel> {
    let scaler = FiberScaler::fit(x);
    let features: Vec<usize> = (0..x.dims().features).collect();
    let stage = fit_stage1(&scaler.scale(x, &features)?, cfg, seed)?;
    Ok(DetensorModel {
        stage,
        scaler,
        count_features: count_features.to_vec(),
    })
}

pub fn fit_detensor(dataset: &PanelDataset, cfg: &BaselineConfig) -> Result<DetensorModel> {
    fit_detensor_tensor(&dataset.training_tensor(), &count_features(dataset), &cfg.detensor, cfg.seed)
}

/// One forecaster per location over all of its features; only the count
/// column of the rollout is reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerLocationModel {
    pub forecasters: Vec<Forecaster>,
    /// Last `window` rows of each location's feature matrix.
    pub history: Vec<Matrix>,
    pub count_feature: usize,
}

impl PerLocationModel {
    /// `L × 1 × horizon` count forecast.
    pub fn forecast(&self, horizon: usize) -> Result<Tensor3> {
        let mut out = Tensor3::zeros(Dims::new(self.forecasters.len(), 1, horizon));
        for (l, (f, h)) in self.forecasters.iter().zip(&self.history).enumerate() {
            let path = forecast(f, h, horizon)?;
            for (t, v) in out.fiber_mut(l, 0).iter_mut().enumerate() {
                *v = path[(t, self.count_feature)].max(0.0);
            }
        }
        Ok(out)
    }
}

fn location_matrix(x: &Tensor3, l: usize) -> Matrix {
    let d = x.dims();
    Matrix::from_fn(d.times, d.features, |t, m| x.get(l, m, t))
}

pub fn fit_per_location_lstm(dataset: &PanelDataset, cfg: &BaselineConfig) -> Result<PerLocationModel> {
    let x = dataset.training_tensor();
    let d = x.dims();
    let window = cfg.per_location.window;
    if d.times < window {
        return Err(Error::precondition(format!(
            "per-location history of {} weeks is shorter than window {window}",
            d.times
        )));
    }
    let mut forecasters = Vec::with_capacity(d.locations);
    let mut history = Vec::with_capacity(d.locations);
    for l in 0..d.locations {
        let series = location_matrix(&x, l);
        let fcfg = ForecasterConfig {
            seed: cfg.seed.wrapping_add(l as u64),
            ..cfg.per_location.clone()
        };
        forecasters.push(train_forecaster(&series, &fcfg)?);
        history.push(series.slice_rows(d.times - window, d.times));
    }
    Ok(PerLocationModel {
        forecasters,
        history,
        count_feature: dataset.count_feature(),
    })
}

/// Forecast step `h` (1-based) copies `series[n − period + (h − 1) mod period]`.
pub fn seasonal_naive(series: &[f64], period: usize, horizon: usize) -> Result<Vec<f64>> {
    if period == 0 || series.len() < period {
        return Err(Error::precondition(format!(
            "seasonal naive needs at least {period} observations, got {}",
            series.len()
        )));
    }
    let start = series.len() - period;
    Ok((0..horizon).map(|h| series[start + h % period]).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalNaiveModel {
    pub period: usize,
    /// Last `period` weeks of every series.
    pub history: Tensor3,
}

impl SeasonalNaiveModel {
    pub fn fit(dataset: &PanelDataset, period: usize) -> Result<Self> {
        let x = dataset.training_tensor();
        let t = x.dims().times;
        if period == 0 || t < period {
            return Err(Error::precondition(format!(
                "seasonal naive needs at least {period} weeks, got {t}"
            )));
        }
        Ok(Self {
            period,
            history: x.slice_time(t - period, t)?,
        })
    }

    pub fn forecast(&self, horizon: usize) -> Result<Tensor3> {
        let d = self.history.dims();
        let mut out = Tensor3::zeros(Dims::new(d.locations, d.features, horizon));
        for l in 0..d.locations {
            for m in 0..d.features {
                let path = seasonal_naive(self.history.fiber(l, m), self.period, horizon)?;
                out.fiber_mut(l, m).copy_from_slice(&path);
            }
        }
        Ok(out)
    }
}

/// Independent univariate autoregression per (location, feature).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArBaselineModel {
    pub locations: usize,
    pub features: usize,
    /// Location-major, one per series.
    pub forecasters: Vec<Forecaster>,
    pub history: Tensor3,
    pub count_features: Vec<usize>,
}

impl ArBaselineModel {
    pub fn fit(dataset: &PanelDataset, window: usize) -> Result<Self> {
        let x = dataset.training_tensor();
        let d = x.dims();
        let cfg = ForecasterConfig::ar(window);
        let mut forecasters = Vec::with_capacity(d.locations * d.features);
        for l in 0..d.locations {
            for m in 0..d.features {
                let series = Matrix::from_vec(d.times, 1, x.fiber(l, m).to_vec())?;
                forecasters.push(train_forecaster(&series, &cfg)?);
            }
        }
        Ok(Self {
            locations: d.locations,
            features: d.features,
            forecasters,
            history: x.slice_time(d.times - window, d.times)?,
            count_features: count_features(dataset),
        })
    }

    pub fn forecast(&self, horizon: usize) -> Result<Tensor3> {
        let mut out = Tensor3::zeros(Dims::new(self.locations, self.features, horizon));
        for l in 0..self.locations {
            for m in 0..self.features {
                let h = self.history.fiber(l, m);
                let hist = Matrix::from_vec(h.len(), 1, h.to_vec())?;
                let path = forecast(&self.forecasters[l * self.features + m], &hist, horizon)?;
                out.fiber_mut(l, m).copy_from_slice(path.as_slice());
            }
        }
        clip_counts(&mut out, &self.count_features);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BaselineModel {
    Detensor(DetensorModel),
    PerLocationLstm(PerLocationModel),
    SeasonalNaive(SeasonalNaiveModel),
    Ar(ArBaselineModel),
}

impl BaselineModel {
    pub fn forecast(&self, horizon: usize) -> Result<Tensor3> {
        match self {
            BaselineModel::Detensor(m) => m.forecast(horizon),
            BaselineModel::PerLocationLstm(m) => m.forecast(horizon),
            BaselineModel::SeasonalNaive(m) => m.forecast(horizon),
            BaselineModel::Ar(m) => m.forecast(horizon),
        }
    }
}

pub(crate) fn count_features(dataset: &PanelDataset) -> Vec<usize> {
    dataset
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| f.role == FeatureRole::Count)
        .map(|(i, _)| i)
        .collect()
}
