//! Fitting any supported model by name, persisting it, and the forecast
//! file formats.

use std::collections::HashMap;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::baselines::{
    fit_detensor, fit_per_location_lstm, ArBaselineModel, BaselineConfig, BaselineModel, SeasonalNaiveModel,
};
use crate::data::{parse_error, read_records, write_long_csv, Feature, PanelDataset};
use crate::error::{Error, Result};
use crate::pipeline::{fit_decom, DecomConfig, DecomModel};
use crate::tensor::{Dims, Tensor3};

pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const FORECAST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Decom,
    Detensor,
    Lstm,
    SeasonalNaive,
    Ar,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Decom,
        ModelKind::Detensor,
        ModelKind::Lstm,
        ModelKind::SeasonalNaive,
        ModelKind::Ar,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Decom => "decom",
            ModelKind::Detensor => "detensor",
            ModelKind::Lstm => "lstm",
            ModelKind::SeasonalNaive => "seasonal_naive",
            ModelKind::Ar => "ar",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::config("model", format!("unknown model `{s}`")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub decom: DecomConfig,
    pub baselines: BaselineConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FittedModel {
    Decom(Box<DecomModel>),
    Baseline(BaselineModel),
}

/// Everything needed to forecast without the training panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub locations: Vec<String>,
    pub features: Vec<Feature>,
    /// Monday of the first forecast week.
    pub forecast_start: NaiveDate,
    pub config: ModelConfig,
    pub model: FittedModel,
}

pub fn fit_model(dataset: &PanelDataset, kind: ModelKind, cfg: &ModelConfig) -> Result<ModelDocument> {
    dataset.validate()?;
    let b = &cfg.baselines;
    let model = match kind {
        ModelKind::Decom => FittedModel::Decom(Box::new(fit_decom(dataset, &cfg.decom)?)),
        ModelKind::Detensor => FittedModel::Baseline(BaselineModel::Detensor(fit_detensor(dataset, b)?)),
        ModelKind::Lstm => FittedModel::Baseline(BaselineModel::PerLocationLstm(fit_per_location_lstm(dataset, b)?)),
        ModelKind::SeasonalNaive => {
            FittedModel::Baseline(BaselineModel::SeasonalNaive(SeasonalNaiveModel::fit(dataset, b.period)?))
        }
        ModelKind::Ar => FittedModel::Baseline(BaselineModel::Ar(ArBaselineModel::fit(dataset, b.ar_window)?)),
    };
    Ok(ModelDocument {
        schema_version: MODEL_SCHEMA_VERSION,
        kind,
        locations: dataset.locations.clone(),
        features: dataset.features.clone(),
        forecast_start: dataset.weeks[dataset.train_end - 1] + Duration::weeks(1),
        config: cfg.clone(),
        model,
    })
}

impl ModelDocument {
    /// Features present in this model's forecasts.
    pub fn output_features(&self) -> Vec<Feature> {
        match &self.model {
            FittedModel::Baseline(BaselineModel::PerLocationLstm(m)) => vec![self.features[m.count_feature].clone()],
            _ => self.features.clone(),
        }
    }

    pub fn forecast(&self, horizon: usize) -> Result<ForecastOutput> {
        let values = match &self.model {
            FittedModel::Decom(m) => m.predict(horizon)?,
            FittedModel::Baseline(m) => m.forecast(horizon)?,
        };
        Ok(ForecastOutput {
            model: self.kind.to_string(),
            locations: self.locations.clone(),
            features: self.output_features().into_iter().map(|f| f.name).collect(),
            weeks: (0..horizon).map(|h| self.forecast_start + Duration::weeks(h as i64)).collect(),
            values,
        })
    }

    /// Rejects panels whose locations or features differ from training.
    pub fn check_compatible(&self, dataset: &PanelDataset) -> Result<()> {
        if dataset.locations != self.locations {
            return Err(Error::Schema("dataset locations differ from the model's".into()));
        }
        if dataset.features != self.features {
            return Err(Error::Schema("dataset features differ from the model's".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<ModelDocument> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_SCHEMA_VERSION as u64 => Ok(serde_json::from_value(value)?),
            Some(v) => Err(Error::Schema(format!("model schema_version {v} is not supported"))),
            None => Err(Error::Schema("model file has no schema_version".into())),
        }
    }
}

/// A `locations × features × weeks` forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastOutput {
    pub model: String,
    pub locations: Vec<String>,
    pub features: Vec<String>,
    pub weeks: Vec<NaiveDate>,
    pub values: Tensor3,
}

#[derive(Serialize, Deserialize)]
struct ForecastJson {
    schema_version: u32,
    model: String,
    locations: Vec<String>,
    features: Vec<String>,
    weeks: Vec<NaiveDate>,
    /// `values[l][m][t]`.
    values: Vec<Vec<Vec<f64>>>,
}

impl ForecastOutput {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let features: Vec<Feature> = self
            .features
            .iter()
            .map(|n| Feature::new(n.clone(), crate::data::FeatureRole::Other))
            .collect();
        write_long_csv(path, &self.locations, &features, &self.weeks, &self.values)
    }

    /// Locations and features in order of first appearance, weeks sorted.
    pub fn read_csv(path: &Path, model: &str) -> Result<ForecastOutput> {
        let records = read_records(path)?;
        let mut locations: Vec<String> = Vec::new();
        let mut features: Vec<String> = Vec::new();
        let mut weeks: Vec<NaiveDate> = Vec::new();
        for (_, loc, feat, week, _) in &records {
            if !locations.contains(loc) {
                locations.push(loc.clone());
            }
            if !features.contains(feat) {
                features.push(feat.clone());
            }
            weeks.push(*week);
        }
        weeks.sort();
        weeks.dedup();
        let week_pos: HashMap<NaiveDate, usize> = weeks.iter().enumerate().map(|(i, w)| (*w, i)).collect();
        let dims = Dims::new(locations.len(), features.len(), weeks.len());
        let mut values = Tensor3::zeros(dims);
        let mut seen = vec![false; dims.len()];
        for (line, loc, feat, week, value) in &records {
            let l = locations.iter().position(|x| x == loc).unwrap_or_default();
            let m = features.iter().position(|x| x == feat).unwrap_or_default();
            let t = week_pos[week];
            let idx = (l * dims.features + m) * dims.times + t;
            if std::mem::replace(&mut seen[idx], true) {
                return Err(parse_error(path, *line, format!("duplicate forecast cell ({loc}, {feat}, {week})")));
            }
            values.set(l, m, t, *value);
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Schema(format!("{}: forecast grid is incomplete", path.display())));
        }
        Ok(ForecastOutput {
            model: model.to_string(),
            locations,
            features,
            weeks,
            values,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let d = self.values.dims();
        let values = (0..d.locations)
            .map(|l| (0..d.features).map(|m| self.values.fiber(l, m).to_vec()).collect())
            .collect();
        Ok(serde_json::to_string_pretty(&ForecastJson {
            schema_version: FORECAST_SCHEMA_VERSION,
            model: self.model.clone(),
            locations: self.locations.clone(),
            features: self.features.clone(),
            weeks: self.weeks.clone(),
            values,
        })?)
    }

    /// Per-location series of `feature`, in the order of `locations`.
    pub fn series(&self, feature: &str, locations: &[String]) -> Result<Vec<Vec<f64>>> {
        let m = self
            .features
            .iter()
            .position(|f| f == feature)
            .ok_or_else(|| Error::Schema(format!("forecast `{}` has no feature `{feature}`", self.model)))?;
        locations
            .iter()
            .map(|loc| {
                let l = self
                    .locations
                    .iter()
                    .position(|x| x == loc)
                    .ok_or_else(|| Error::Schema(format!("forecast `{}` has no location `{loc}`", self.model)))?;
                Ok(self.values.fiber(l, m).to_vec())
            })
            .collect()
    }
}
