//! `decom` subcommands: generate a synthetic panel, fit a model, forecast,
//! and evaluate forecasts against held-out weeks.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use decom_core::data::{generate_scenario, load_csv, write_csv, PanelDataset, PanelMeta, ScenarioConfig};
use decom_core::eval::{evaluate, DEFAULT_HORIZONS};
use decom_core::model::{fit_model, ForecastOutput, ModelConfig, ModelDocument, ModelKind};
use decom_core::temporal::ForecasterKind;
use decom_core::{Error, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "decom", version, about = "Two-stage tensor forecasting for disrupted seasonal panels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic disrupted panel (CSV plus metadata JSON).
    Generate(GenerateArgs),
    /// Fit a model and write it as JSON.
    Fit(FitArgs),
    /// Forecast from a fitted model.
    Forecast(ForecastArgs),
    /// Score forecast files against the panel's held-out weeks.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Panel CSV (`location,feature,week,value`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Panel metadata; defaults to `<data stem>.meta.json`.
    #[arg(long)]
    pub meta: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub locations: Option<usize>,
    #[arg(long)]
    pub weeks: Option<usize>,
    #[arg(long)]
    pub suppression: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub shift: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// decom | detensor | lstm | seasonal_naive | ar
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub cut_date: Option<NaiveDate>,
    #[arg(long)]
    pub train_end_date: Option<NaiveDate>,
    /// Rank of the seasonal (and single-stage) factorization.
    #[arg(long)]
    pub k1: Option<usize>,
    /// Rank of the residual factorization.
    #[arg(long)]
    pub k2: Option<usize>,
    /// Forecaster for the tensor stages: lstm | ar
    #[arg(long)]
    pub forecaster: Option<String>,
    /// Window of the seasonal, single-stage and per-location forecasters.
    #[arg(long)]
    pub window: Option<usize>,
    /// Window of the residual forecaster.
    #[arg(long)]
    pub window2: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Fitted model JSON.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Optional panel to check the model against.
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub data: DataArgs,
    /// Forecast CSV; repeat for several models.
    #[arg(long = "forecast")]
    pub forecasts: Vec<PathBuf>,
    /// Comma-separated, e.g. `12,24,52`.
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
}

/// Contents of the `--config` file. Every section is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub data: DataSection,
    pub scenario: ScenarioConfig,
    pub fit: FitSection,
    pub forecast: ForecastSection,
    pub evaluate: EvaluateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: None,
            out_dir: None,
            data: DataSection::default(),
            scenario: ScenarioConfig::default(),
            fit: FitSection::default(),
            forecast: ForecastSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub csv: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub cut_date: Option<NaiveDate>,
    pub train_end_date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitSection {
    pub model: ModelKind,
    #[serde(flatten)]
    pub config: ModelConfig,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            model: ModelKind::Decom,
            config: ModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastSection {
    pub model_file: Option<PathBuf>,
    pub horizon: usize,
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self {
            model_file: None,
            horizon: 52,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    pub forecasts: Vec<PathBuf>,
    pub horizons: Vec<usize>,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        Self {
            forecasts: Vec::new(),
            horizons: DEFAULT_HORIZONS.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = read_text(path)?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::config("config", format!("{}: {}", path.display(), e.message())))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "config schema_version {} is not supported",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    fn apply_common(&mut self, common: &CommonArgs) {
        if common.seed.is_some() {
            self.seed = common.seed;
        }
        if common.out_dir.is_some() {
            self.out_dir.clone_from(&common.out_dir);
        }
    }

    fn apply_data(&mut self, data: &DataArgs) {
        if data.data.is_some() {
            self.data.csv.clone_from(&data.data);
        }
        if data.meta.is_some() {
            self.data.meta.clone_from(&data.meta);
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

/// `panel.csv` → `panel.meta.json`.
pub fn default_meta_path(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    csv.with_file_name(format!("{stem}.meta.json"))
}

fn load_panel(cfg: &RunConfig) -> Result<PanelDataset> {
    let csv = cfg
        .data
        .csv
        .as_deref()
        .ok_or_else(|| Error::config("data", "no panel CSV given (use --data)"))?;
    let meta_path = cfg.data.meta.clone().unwrap_or_else(|| default_meta_path(csv));
    let mut meta = PanelMeta::read(&meta_path)?;
    if let Some(d) = cfg.data.cut_date {
        meta.cut_date = d;
    }
    if let Some(d) = cfg.data.train_end_date {
        meta.train_end_date = d;
    }
    Ok(load_csv(csv, &meta)?.0)
}

/// Writes `panel.csv` and `panel.meta.json`; returns their paths.
pub fn cmd_generate(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let mut scenario = cfg.scenario.clone();
    if let Some(seed) = cfg.seed {
        scenario.seed = seed;
    }
    let dataset = generate_scenario(&scenario)?;
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let csv = dir.join("panel.csv");
    let meta = dir.join("panel.meta.json");
    write_csv(&dataset, &csv)?;
    dataset.meta().write(&meta)?;
    Ok((csv, meta))
}

fn model_config(cfg: &RunConfig) -> ModelConfig {
    let mut mc = cfg.fit.config.clone();
    if let Some(seed) = cfg.seed {
        mc.decom.seed = seed;
        mc.baselines.seed = seed;
    }
    mc
}

/// Fits the configured model; returns the model file path.
pub fn cmd_fit(cfg: &RunConfig) -> Result<PathBuf> {
    let dataset = load_panel(cfg)?;
    let doc = fit_model(&dataset, cfg.fit.model, &model_config(cfg))?;
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let path = dir.join(format!("{}.model.json", cfg.fit.model));
    write_text(&path, &(doc.to_json()? + "\n"))?;
    Ok(path)
}

pub fn load_model(path: &Path) -> Result<ModelDocument> {
    ModelDocument::from_json(&read_text(path)?)
}

/// Writes `<model>.forecast.csv` and `.json`; returns both paths.
pub fn cmd_forecast(cfg: &RunConfig) -> Result<(PathBuf, PathBuf)> {
    let model_path = cfg
        .forecast
        .model_file
        .as_deref()
        .ok_or_else(|| Error::config("model_file", "no model file given (use --model-file)"))?;
    let doc = load_model(model_path)?;
    if cfg.data.csv.is_some() {
        doc.check_compatible(&load_panel(cfg)?)?;
    }
    let out = doc.forecast(cfg.forecast.horizon)?;
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    let csv = dir.join(format!("{}.forecast.csv", doc.kind));
    let json = dir.join(format!("{}.forecast.json", doc.kind));
    out.write_csv(&csv)?;
    write_text(&json, &(out.to_json()? + "\n"))?;
    Ok((csv, json))
}

fn model_name(path: &Path) -> String {
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    name.strip_suffix(".forecast.csv")
        .or_else(|| name.strip_suffix(".csv"))
        .unwrap_or(&name)
        .to_string()
}

/// Writes `report.json`, `table.csv` and `peaks.csv`; returns the directory.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<PathBuf> {
    let dataset = load_panel(cfg)?;
    if cfg.evaluate.forecasts.is_empty() {
        return Err(Error::config("forecasts", "no forecast files given (use --forecast)"));
    }
    let count = &dataset.features[dataset.count_feature()].name;
    let truth = dataset.test_tensor();
    let available = truth.dims().times;
    if let Some(&h) = cfg.evaluate.horizons.iter().find(|&&h| h > available) {
        return Err(Error::config(
            "horizons",
            format!("horizon {h} exceeds the {available} held-out weeks"),
        ));
    }
    let c = dataset.count_feature();
    let actual: Vec<Vec<f64>> = (0..dataset.locations.len()).map(|l| truth.fiber(l, c).to_vec()).collect();
    let first_week = dataset.weeks.get(dataset.train_end).copied();

    let mut forecasts = Vec::new();
    for path in &cfg.evaluate.forecasts {
        let name = model_name(path);
        let out = ForecastOutput::read_csv(path, &name)?;
        if out.weeks.first().copied() != first_week {
            return Err(Error::Schema(format!(
                "{}: forecast does not start at the first held-out week",
                path.display()
            )));
        }
        forecasts.push((name, out.series(count, &dataset.locations)?));
    }
    let report = evaluate(&dataset.locations, &actual, &forecasts, &cfg.evaluate.horizons)?;
    let dir = cfg.out_dir();
    ensure_dir(&dir)?;
    write_text(&dir.join("report.json"), &(report.to_json()? + "\n"))?;
    write_text(&dir.join("table.csv"), &report.table_csv())?;
    write_text(&dir.join("peaks.csv"), &report.peak_csv())?;
    Ok(dir)
}

fn parse_forecaster(s: &str) -> Result<ForecasterKind> {
    s.parse()
        .map_err(|_| Error::config("forecaster", format!("unknown forecaster `{s}`")))
}

/// Merges the config file and command-line overrides, then runs the command.
/// Returns the human-readable summary printed on success.
pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Generate(a) => {
            let mut cfg = RunConfig::load(a.common.config.as_deref())?;
            cfg.apply_common(&a.common);
            let s = &mut cfg.scenario;
            s.locations = a.locations.unwrap_or(s.locations);
            s.weeks = a.weeks.unwrap_or(s.weeks);
            s.suppression = a.suppression.unwrap_or(s.suppression);
            s.resurgence_shift = a.shift.unwrap_or(s.resurgence_shift);
            s.noise = a.noise.unwrap_or(s.noise);
            let (csv, meta) = cmd_generate(&cfg)?;
            Ok(format!("wrote {} and {}", csv.display(), meta.display()))
        }
        Command::Fit(a) => {
            let mut cfg = RunConfig::load(a.common.config.as_deref())?;
            cfg.apply_common(&a.common);
            cfg.apply_data(&a.data);
            if let Some(m) = &a.model {
                cfg.fit.model = m.parse()?;
            }
            if a.cut_date.is_some() {
                cfg.data.cut_date = a.cut_date;
            }
            if a.train_end_date.is_some() {
                cfg.data.train_end_date = a.train_end_date;
            }
            let mc = &mut cfg.fit.config;
            if let Some(k) = a.k1 {
                mc.decom.stage1.rank = k;
                mc.baselines.detensor.rank = k;
            }
            if let Some(k) = a.k2 {
                mc.decom.stage2.rank = k;
            }
            let kind = a.forecaster.as_deref().map(parse_forecaster).transpose()?;
            for f in [&mut mc.decom.stage1.forecaster, &mut mc.decom.stage2.forecaster, &mut mc.baselines.detensor.forecaster] {
                if let Some(k) = kind {
                    f.kind = k;
                }
            }
            if let Some(w) = a.window {
                mc.decom.stage1.forecaster.window = w;
                mc.baselines.detensor.forecaster.window = w;
                mc.baselines.per_location.window = w;
            }
            if let Some(w) = a.window2 {
                mc.decom.stage2.forecaster.window = w;
            }
            for f in [
                &mut mc.decom.stage1.forecaster,
                &mut mc.decom.stage2.forecaster,
                &mut mc.baselines.detensor.forecaster,
                &mut mc.baselines.per_location,
            ] {
                f.hidden = a.hidden.unwrap_or(f.hidden);
                f.epochs = a.epochs.unwrap_or(f.epochs);
                f.learning_rate = a.learning_rate.unwrap_or(f.learning_rate);
            }
            let path = cmd_fit(&cfg)?;
            Ok(format!("wrote {}", path.display()))
        }
        Command::Forecast(a) => {
            let mut cfg = RunConfig::load(a.common.config.as_deref())?;
            cfg.apply_common(&a.common);
            cfg.apply_data(&a.data);
            if a.model_file.is_some() {
                cfg.forecast.model_file = a.model_file;
            }
            cfg.forecast.horizon = a.horizon.unwrap_or(cfg.forecast.horizon);
            let (csv, json) = cmd_forecast(&cfg)?;
            Ok(format!("wrote {} and {}", csv.display(), json.display()))
        }
        Command::Evaluate(a) => {
            let mut cfg = RunConfig::load(a.common.config.as_deref())?;
            cfg.apply_common(&a.common);
            cfg.apply_data(&a.data);
            if !a.forecasts.is_empty() {
                cfg.evaluate.forecasts = a.forecasts;
            }
            if let Some(h) = a.horizons {
                cfg.evaluate.horizons = h;
            }
            let dir = cmd_evaluate(&cfg)?;
            Ok(format!("wrote report.json, table.csv and peaks.csv to {}", dir.display()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_path_next_to_csv() {
        assert_eq!(default_meta_path(Path::new("d/panel.csv")), PathBuf::from("d/panel.meta.json"));
    }

    #[test]
    fn model_names_from_files() {
        assert_eq!(model_name(Path::new("out/decom.forecast.csv")), "decom");
        assert_eq!(model_name(Path::new("x.csv")), "x");
    }

    #[test]
    fn config_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn partial_config() {
        let cfg: RunConfig = toml::from_str(
            "schema_version = 1\nseed = 3\n[fit]\nmodel = \"detensor\"\n[fit.decom.stage1]\nrank = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.fit.model, ModelKind::Detensor);
        assert_eq!(cfg.fit.config.decom.stage1.rank, 4);
        assert_eq!(cfg.fit.config.decom.stage2.rank, 3);
    }
}
