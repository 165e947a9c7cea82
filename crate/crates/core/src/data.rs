//! Panel datasets: CSV ingestion, train/test splitting and a synthetic
//! generator for seasonal panels disrupted by an intervention window.
//!
//! The panel CSV has the header `location,feature,week,value`; `week` is the
//! ISO date of the week's Monday. Values are written with Rust's shortest
//! round-trip float formatting, so write/load is bit-exact. Feature roles,
//! orderings and the cut/training-end dates live in a JSON sidecar
//! ([`PanelMeta`]).

use std::collections::{BTreeSet, HashMap};
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::FeatureAlignment;
use crate::tensor::{Dims, Tensor3};

pub const PANEL_SCHEMA_VERSION: u32 = 1;
pub const SCENARIO_SCHEMA_VERSION: u32 = 1;
pub const CSV_HEADER: [&str; 4] = ["location", "feature", "week", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRole {
    /// The case-count target. Exactly one per panel.
    Count,
    Climate,
    /// Observed only after the disruption starts; excluded from the
    /// pre-disruption tensor.
    Covid,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub role: FeatureRole,
}

impl Feature {
    pub fn new(name: impl Into<String>, role: FeatureRole) -> Self {
        Self {
            name: name.into(),
            role,
        }
    }
}

/// Ground truth recorded by the scenario generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    /// Absolute week index of each location's count peak in the test range.
    pub location_peak_weeks: Vec<usize>,
    /// Absolute week index of the peak of the summed counts in the test range.
    pub country_peak_week: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelDataset {
    pub tensor: Tensor3,
    pub locations: Vec<String>,
    pub features: Vec<Feature>,
    pub weeks: Vec<NaiveDate>,
    /// First week of the disrupted period (`T1`).
    pub cut_index: usize,
    /// One past the last training week; weeks from here on are held out.
    pub train_end: usize,
    pub truth: Option<ScenarioTruth>,
}

impl PanelDataset {
    pub fn validate(&self) -> Result<()> {
        let d = self.tensor.dims();
        if d.locations != self.locations.len() || d.features != self.features.len() || d.times != self.weeks.len() {
            return Err(Error::contract(format!(
                "tensor {}x{}x{} disagrees with {} locations, {} features, {} weeks",
                d.locations,
                d.features,
                d.times,
                self.locations.len(),
                self.features.len(),
                self.weeks.len()
            )));
        }
        for w in self.weeks.windows(2) {
            if w[1] - w[0] != Duration::days(7) {
                return Err(Error::contract(format!("weeks {} and {} are not 7 days apart", w[0], w[1])));
            }
        }
        let counts = self.features.iter().filter(|f| f.role == FeatureRole::Count).count();
        if counts != 1 {
            return Err(Error::contract(format!("expected exactly one count feature, found {counts}")));
        }
        if !(0 < self.cut_index && self.cut_index < self.train_end && self.train_end <= d.times) {
            return Err(Error::contract(format!(
                "need 0 < cut ({}) < train_end ({}) <= weeks ({})",
                self.cut_index, self.train_end, d.times
            )));
        }
        Ok(())
    }

    pub fn count_feature(&self) -> usize {
        self.features
            .iter()
            .position(|f| f.role == FeatureRole::Count)
            .expect("validated panel has a count feature")
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Index of the week containing `date`.
    pub fn week_index(&self, date: NaiveDate) -> Option<usize> {
        let first = *self.weeks.first()?;
        if date < first {
            return None;
        }
        let idx = ((date - first).num_days() / 7) as usize;
        (idx < self.weeks.len()).then_some(idx)
    }

    /// Training tensor `[0, train_end)`.
    pub fn training_tensor(&self) -> Tensor3 {
        self.tensor.slice_time(0, self.train_end).expect("validated range")
    }

    /// Held-out tensor `[train_end, T)`.
    pub fn test_tensor(&self) -> Tensor3 {
        self.tensor
            .slice_time(self.train_end, self.weeks.len())
            .expect("validated range")
    }

    pub fn meta(&self) -> PanelMeta {
        PanelMeta {
            schema_version: PANEL_SCHEMA_VERSION,
            locations: self.locations.clone(),
            features: self.features.clone(),
            cut_date: self.weeks[self.cut_index],
            train_end_date: self.weeks[self.train_end - 1],
            missing: MissingPolicy::Zero,
            truth: self.truth.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Absent `(location, feature, week)` cells become 0 and are counted.
    #[default]
    Zero,
    Error,
}

/// JSON sidecar describing how to interpret a panel CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelMeta {
    pub schema_version: u32,
    /// Location order; when empty, locations are sorted by name.
    #[serde(default)]
    pub locations: Vec<String>,
    /// Feature order and roles. Features in the CSV but not listed here are
    /// appended in name order with role `other`.
    pub features: Vec<Feature>,
    /// Any date inside the first disrupted week.
    pub cut_date: NaiveDate,
    /// Any date inside the last training week.
    pub train_end_date: NaiveDate,
    #[serde(default)]
    pub missing: MissingPolicy,
    #[serde(default)]
    pub truth: Option<ScenarioTruth>,
}

impl PanelMeta {
    pub fn read(path: &Path) -> Result<PanelMeta> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let meta: PanelMeta = serde_json::from_str(&text)?;
        if meta.schema_version != PANEL_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "panel schema_version {} is not supported",
                meta.schema_version
            )));
        }
        Ok(meta)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows: usize,
    pub missing_cells: usize,
}

pub(crate) fn parse_error(path: &Path, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

pub fn parse_week(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

/// Raw `(location, feature, week, value)` records with their line numbers.
pub(crate) fn read_records(path: &Path) -> Result<Vec<(usize, String, String, NaiveDate, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(format!("opening {}", path.display()), io),
            other => parse_error(path, 0, format!("{other:?}")),
        })?;
    let header = reader.headers().map_err(|e| parse_error(path, 1, e.to_string()))?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != CSV_HEADER {
        return Err(parse_error(
            path,
            1,
            format!("expected header `{}`, found `{}`", CSV_HEADER.join(","), names.join(",")),
        ));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 4 {
            return Err(parse_error(path, line, format!("expected 4 fields, found {}", record.len())));
        }
        let week = parse_week(&record[2])
            .ok_or_else(|| parse_error(path, line, format!("bad week date `{}`", &record[2])))?;
        if week.weekday() != Weekday::Mon {
            return Err(parse_error(path, line, format!("week {week} is not a Monday")));
        }
        let value: f64 = record[3]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad value `{}`", &record[3])))?;
        if !value.is_finite() {
            return Err(parse_error(path, line, "value is not finite"));
        }
        out.push((line, record[0].trim().to_string(), record[1].trim().to_string(), week, value));
    }
    Ok(out)
}

/// Loads a panel CSV, interpreting it with `meta`.
pub fn load_csv(path: &Path, meta: &PanelMeta) -> Result<(PanelDataset, LoadReport)> {
    let records = read_records(path)?;
    if records.is_empty() {
        return Err(parse_error(path, 1, "no data rows"));
    }

    let locations: Vec<String> = if meta.locations.is_empty() {
        records.iter().map(|r| r.1.clone()).collect::<BTreeSet<_>>().into_iter().collect()
    } else {
        meta.locations.clone()
    };
    let mut features = meta.features.clone();
    let extra: BTreeSet<&String> = records
        .iter()
        .map(|r| &r.2)
        .filter(|name| !features.iter().any(|f| &f.name == *name))
        .collect();
    features.extend(extra.into_iter().map(|n| Feature::new(n.clone(), FeatureRole::Other)));

    let first = records.iter().map(|r| r.3).min().expect("nonempty");
    let last = records.iter().map(|r| r.3).max().expect("nonempty");
    let n_weeks = ((last - first).num_days() / 7) as usize + 1;
    let weeks: Vec<NaiveDate> = (0..n_weeks).map(|i| first + Duration::weeks(i as i64)).collect();

    let loc_index: HashMap<&str, usize> = locations.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let feat_index: HashMap<&str, usize> =
        features.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect();

    let dims = Dims::new(locations.len(), features.len(), n_weeks);
    let mut tensor = Tensor3::zeros(dims);
    let mut seen: Vec<usize> = vec![0; dims.len()];
    for (line, loc, feat, week, value) in &records {
        let l = *loc_index
            .get(loc.as_str())
            .ok_or_else(|| parse_error(path, *line, format!("unknown location `{loc}`")))?;
        let m = feat_index[feat.as_str()];
        let t = ((*week - first).num_days() / 7) as usize;
        let cell = (l * dims.features + m) * dims.times + t;
        if seen[cell] != 0 {
            return Err(parse_error(
                path,
                *line,
                format!(
                    "duplicate cell ({loc}, {feat}, {week}); first seen on line {}",
                    seen[cell]
                ),
            ));
        }
        seen[cell] = *line;
        tensor.set(l, m, t, *value);
    }
    let missing_cells = seen.iter().filter(|&&s| s == 0).count();
    if missing_cells > 0 && meta.missing == MissingPolicy::Error {
        return Err(parse_error(path, 0, format!("{missing_cells} cells are missing")));
    }

    let locate = |date: NaiveDate, what: &str| -> Result<usize> {
        if date < first || date >= weeks[n_weeks - 1] + Duration::days(7) {
            return Err(Error::config(what, format!("{date} is outside {first}..{last}")));
        }
        Ok(((date - first).num_days() / 7) as usize)
    };
    let cut_index = locate(meta.cut_date, "cut_date")?;
    let train_end = locate(meta.train_end_date, "train_end_date")? + 1;

    let dataset = PanelDataset {
        tensor,
        locations,
        features,
        weeks,
        cut_index,
        train_end,
        truth: meta.truth.clone(),
    };
    dataset.validate()?;
    Ok((
        dataset,
        LoadReport {
            rows: records.len(),
            missing_cells,
        },
    ))
}

/// Writes one CSV row per `(location, feature, week)` in tensor order.
pub fn write_csv(dataset: &PanelDataset, path: &Path) -> Result<()> {
    write_long_csv(path, &dataset.locations, &dataset.features, &dataset.weeks, &dataset.tensor)
}

pub(crate) fn write_long_csv(
    path: &Path,
    locations: &[String],
    features: &[Feature],
    weeks: &[NaiveDate],
    tensor: &Tensor3,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(format!("creating {}", path.display()), io),
        other => Error::Schema(format!("{other:?}")),
    })?;
    let io_err = |e: csv::Error| Error::Schema(format!("writing {}: {e}", path.display()));
    writer.write_record(CSV_HEADER).map_err(io_err)?;
    for (l, loc) in locations.iter().enumerate() {
        for (m, feat) in features.iter().enumerate() {
            for (t, week) in weeks.iter().enumerate() {
                let value = tensor.get(l, m, t);
                writer
                    .write_record([loc.as_str(), feat.name.as_str(), &week.to_string(), &value.to_string()])
                    .map_err(io_err)?;
            }
        }
    }
    writer
        .flush()
        .map_err(|e| Error::io(format!("flushing {}", path.display()), e))
}

/// Output of [`split`].
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPanel {
    /// Pre-disruption tensor over non-covid features, weeks `[0, T1)`.
    pub x1: Tensor3,
    /// Disrupted tensor over all features, weeks `[T1, T)`.
    pub x2: Tensor3,
    pub alignment: FeatureAlignment,
    /// Panel feature indices making up the feature mode of `x1`.
    pub x1_features: Vec<usize>,
    pub cut_index: usize,
    /// One past the last week in `x2`.
    pub end_index: usize,
}

/// Splits the training range at the week containing `cut_date`; the
/// disrupted part runs through the week containing `end_date`.
pub fn split(dataset: &PanelDataset, cut_date: NaiveDate, end_date: NaiveDate) -> Result<SplitPanel> {
    let cut_index = dataset
        .week_index(cut_date)
        .ok_or_else(|| Error::config("cut_date", format!("{cut_date} is outside the panel")))?;
    let end_index = dataset
        .week_index(end_date)
        .ok_or_else(|| Error::config("end_date", format!("{end_date} is outside the panel")))?
        + 1;
    split_at(dataset, cut_index, end_index)
}

/// [`split`] with week indices instead of dates.
pub fn split_at(dataset: &PanelDataset, cut_index: usize, end_index: usize) -> Result<SplitPanel> {
    let weeks = dataset.weeks.len();
    if cut_index == 0 || cut_index >= end_index || end_index > weeks {
        return Err(Error::config(
            "cut_date",
            format!("cut week {cut_index} must lie inside 1..{end_index} (panel has {weeks} weeks)"),
        ));
    }
    let x1_features: Vec<usize> = dataset
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| f.role != FeatureRole::Covid)
        .map(|(i, _)| i)
        .collect();
    if x1_features.is_empty() {
        return Err(Error::precondition("no features are observed before the cut"));
    }
    let x1 = dataset.tensor.slice_time(0, cut_index)?.select_features(&x1_features)?;
    let x2 = dataset.tensor.slice_time(cut_index, end_index)?;
    let x1_names: Vec<String> = x1_features.iter().map(|&i| dataset.features[i].name.clone()).collect();
    let x2_names: Vec<String> = dataset.features.iter().map(|f| f.name.clone()).collect();
    let alignment = FeatureAlignment::by_name(&x2_names, &x1_names);
    Ok(SplitPanel {
        x1,
        x2,
        alignment,
        x1_features,
        cut_index,
        end_index,
    })
}

/// Synthetic panel with one seasonal count bump per period, an
/// intervention window that suppresses counts, and an early, amplified
/// resurgence afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub locations: usize,
    pub weeks: usize,
    /// Season length in weeks.
    pub period: usize,
    /// Peak position within the season for the first location, in weeks.
    pub peak_week: f64,
    /// Extra peak delay per location index (south to north), in weeks.
    pub phase_lag: f64,
    /// Mean peak height of the count feature.
    pub amplitude: f64,
    /// Relative spread of per-location peak heights, in `[0, 1)`.
    pub amplitude_spread: f64,
    /// Standard deviation of each seasonal bump, in weeks.
    pub peak_width: f64,
    /// Off-season floor as a fraction of the location's amplitude.
    pub baseline: f64,
    /// Intervention window `[npi_start, npi_end)` in week indices.
    pub npi_start: usize,
    pub npi_end: usize,
    /// Fraction of counts removed inside the window, in `[0, 1]`.
    pub suppression: f64,
    /// Seasonal phase offset after the window; negative is earlier.
    pub resurgence_shift: f64,
    /// Post-window seasons are scaled by `1 + rebound · suppression`,
    /// a stand-in for the susceptible pool built up during suppression.
    pub rebound: f64,
    /// Gaussian noise standard deviation as a fraction of each feature's
    /// amplitude.
    pub noise: f64,
    /// Peak covid-feature level relative to the count amplitude.
    pub covid_scale: f64,
    /// Held-out weeks at the end of the panel.
    pub test_weeks: usize,
    /// Monday of week 0.
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::s1(7)
    }
}

impl ScenarioConfig {
    /// The reference disrupted scenario with the given generator seed.
    pub fn s1(seed: u64) -> Self {
        Self {
            schema_version: SCENARIO_SCHEMA_VERSION,
            locations: 10,
            weeks: 340,
            period: 52,
            peak_week: -2.0,
            phase_lag: 0.5,
            amplitude: 1000.0,
            amplitude_spread: 0.4,
            peak_width: 6.0,
            baseline: 0.05,
            npi_start: 228,
            npi_end: 280,
            suppression: 0.95,
            resurgence_shift: -16.0,
            rebound: 0.6,
            noise: 0.02,
            covid_scale: 0.5,
            test_weeks: 52,
            // Week 228 is the week of 2020-03-09, which contains 2020-03-15.
            start_date: NaiveDate::from_ymd_opt(2015, 10, 26).expect("valid date"),
            seed,
        }
    }

    /// Same panel without any disruption.
    pub fn undisrupted(seed: u64) -> Self {
        Self {
            suppression: 0.0,
            resurgence_shift: 0.0,
            ..Self::s1(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::config(field, reason));
        if self.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "scenario schema_version {} is not supported",
                self.schema_version
            )));
        }
        if self.locations == 0 {
            return bad("locations", "must be at least 1");
        }
        if self.period < 2 {
            return bad("period", "must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.suppression) {
            return bad("suppression", "must lie in [0, 1]");
        }
        if !(self.amplitude >= 0.0) {
            return bad("amplitude", "must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.amplitude_spread) {
            return bad("amplitude_spread", "must lie in [0, 1)");
        }
        if !(self.peak_width > 0.0) {
            return bad("peak_width", "must be positive");
        }
        if !(self.baseline >= 0.0) {
            return bad("baseline", "must be nonnegative");
        }
        if !(self.rebound >= 0.0) {
            return bad("rebound", "must be nonnegative");
        }
        if !(self.noise >= 0.0) {
            return bad("noise", "must be nonnegative");
        }
        if !(self.covid_scale >= 0.0) {
            return bad("covid_scale", "must be nonnegative");
        }
        if !(self.peak_week.is_finite() && self.phase_lag.is_finite() && self.resurgence_shift.is_finite()) {
            return bad("peak_week", "phase parameters must be finite");
        }
        if !(1 <= self.npi_start && self.npi_start < self.npi_end && self.npi_end <= self.weeks) {
            return bad("npi_start", "window must satisfy 1 <= start < end <= weeks");
        }
        if self.test_weeks == 0 || self.test_weeks + self.npi_start >= self.weeks {
            return bad("test_weeks", "must leave training weeks after the window start");
        }
        if self.start_date.weekday() != Weekday::Mon {
            return bad("start_date", "must be a Monday");
        }
        Ok(())
    }

    pub fn train_end(&self) -> usize {
        self.weeks - self.test_weeks
    }

    /// Noise-free seasonal count shape for location `l` at (possibly
    /// fractional) week `t`, in units of the location's amplitude.
    fn season(&self, l: usize, t: f64) -> f64 {
        let p = self.period as f64;
        let center = self.peak_week + self.phase_lag * l as f64;
        // nearest peaks on either side cover every bump wider than a few weeks
        let k0 = ((t - center) / p).floor();
        (-2..=2)
            .map(|dk| {
                let mu = center + (k0 + dk as f64) * p;
                let z = (t - mu) / self.peak_width;
                (-0.5 * z * z).exp()
            })
            .sum()
    }
}

/// Builds a panel with features `rsv_cases` (count), `temperature`,
/// `humidity` (climate) and `covid_cases` (covid).
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<PanelDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spread = Uniform::new_inclusive(1.0 - cfg.amplitude_spread, 1.0 + cfg.amplitude_spread);
    let loc_amp: Vec<f64> = (0..cfg.locations).map(|_| cfg.amplitude * spread.sample(&mut rng)).collect();
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let p = cfg.period as f64;

    let features = vec![
        Feature::new("rsv_cases", FeatureRole::Count),
        Feature::new("temperature", FeatureRole::Climate),
        Feature::new("humidity", FeatureRole::Climate),
        Feature::new("covid_cases", FeatureRole::Covid),
    ];
    let dims = Dims::new(cfg.locations, features.len(), cfg.weeks);
    let mut tensor = Tensor3::zeros(dims);
    let window = cfg.npi_start..cfg.npi_end;
    let surge = 1.0 + cfg.rebound * cfg.suppression;

    for (l, &amp) in loc_amp.iter().enumerate() {
        let phase = cfg.peak_week + cfg.phase_lag * l as f64;
        for t in 0..cfg.weeks {
            let tf = t as f64;
            let seasonal = if t >= cfg.npi_end {
                surge * cfg.season(l, tf - cfg.resurgence_shift)
            } else {
                cfg.season(l, tf)
            };
            let clean = amp * (cfg.baseline + seasonal);
            let mut count = (clean + cfg.noise * amp * unit.sample(&mut rng)).max(0.0);
            if window.contains(&t) {
                count *= 1.0 - cfg.suppression;
            }
            tensor.set(l, 0, t, count);

            let angle = 2.0 * PI * (tf - phase) / p;
            let temperature = 15.0 - 10.0 * angle.cos() + cfg.noise * 10.0 * unit.sample(&mut rng);
            let humidity = 60.0 + 15.0 * (angle - 2.0 * PI * 8.0 / p).cos() + cfg.noise * 15.0 * unit.sample(&mut rng);
            tensor.set(l, 1, t, temperature.max(0.0));
            tensor.set(l, 2, t, humidity.max(0.0));

            let covid = if window.contains(&t) {
                let ramp = (t - cfg.npi_start + 1) as f64 / (cfg.npi_end - cfg.npi_start) as f64;
                cfg.covid_scale * amp * ramp
            } else {
                0.0
            };
            tensor.set(l, 3, t, covid);
        }
    }

    let train_end = cfg.train_end();
    let argmax = |series: &[f64]| {
        series
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
            .0
    };
    let location_peak_weeks = (0..cfg.locations)
        .map(|l| train_end + argmax(&tensor.fiber(l, 0)[train_end..]))
        .collect();
    let country: Vec<f64> = (train_end..cfg.weeks)
        .map(|t| (0..cfg.locations).map(|l| tensor.get(l, 0, t)).sum())
        .collect();
    let truth = ScenarioTruth {
        location_peak_weeks,
        country_peak_week: train_end + argmax(&country),
    };

    let dataset = PanelDataset {
        tensor,
        locations: (0..cfg.locations).map(|l| format!("loc{l:02}")).collect(),
        features,
        weeks: (0..cfg.weeks)
            .map(|t| cfg.start_date + Duration::weeks(t as i64))
            .collect(),
        cut_index: cfg.npi_start,
        train_end,
        truth: Some(truth),
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn small_meta() -> PanelMeta {
        PanelMeta {
            schema_version: PANEL_SCHEMA_VERSION,
            locations: vec![],
            features: vec![Feature::new("cases", FeatureRole::Count)],
            cut_date: NaiveDate::from_ymd_opt(2021, 1, 11).unwrap(),
            train_end_date: NaiveDate::from_ymd_opt(2021, 1, 18).unwrap(),
            missing: MissingPolicy::Zero,
            truth: None,
        }
    }

    fn write_file(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for line in lines {
            writeln!(f, "{line}").unwrap();
        }
        f
    }

    const ROWS: [&str; 6] = [
        "a,cases,2021-01-04,1",
        "a,cases,2021-01-11,2",
        "a,cases,2021-01-18,3",
        "b,cases,2021-01-04,4",
        "b,cases,2021-01-11,5.5",
        "b,cases,2021-01-18,6",
    ];

    #[test]
    fn load_small_panel() {
        let mut lines = vec!["location,feature,week,value"];
        lines.extend(ROWS);
        let f = write_file(&lines);
        let (d, report) = load_csv(f.path(), &small_meta()).unwrap();
        assert_eq!(d.tensor.dims(), Dims::new(2, 1, 3));
        assert_eq!(d.tensor.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.5, 6.0]);
        assert_eq!(report, LoadReport { rows: 6, missing_cells: 0 });
        assert_eq!((d.cut_index, d.train_end), (1, 3));
    }

    #[test]
    fn row_order_does_not_matter() {
        let mut lines = vec!["location,feature,week,value"];
        lines.extend(ROWS);
        let mut shuffled = vec!["location,feature,week,value"];
        shuffled.extend([ROWS[4], ROWS[0], ROWS[5], ROWS[2], ROWS[1], ROWS[3]]);
        let a = load_csv(write_file(&lines).path(), &small_meta()).unwrap().0;
        let b = load_csv(write_file(&shuffled).path(), &small_meta()).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_cell_reports_both_lines() {
        let f = write_file(&[
            "location,feature,week,value",
            ROWS[0],
            ROWS[1],
            ROWS[2],
            "a,cases,2021-01-11,9",
        ]);
        let err = load_csv(f.path(), &small_meta()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Parse { line: 5, .. }), "{msg}");
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn malformed_value_has_line_number() {
        let f = write_file(&["location,feature,week,value", ROWS[0], "a,cases,2021-01-11,abc"]);
        let err = load_csv(f.path(), &small_meta()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn bad_header_rejected() {
        let f = write_file(&["loc,feat,week,value", ROWS[0]]);
        assert!(matches!(load_csv(f.path(), &small_meta()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_cells_zero_filled_or_rejected() {
        let f = write_file(&["location,feature,week,value", ROWS[0], ROWS[1], ROWS[2], ROWS[3], ROWS[5]]);
        let (d, report) = load_csv(f.path(), &small_meta()).unwrap();
        assert_eq!(report.missing_cells, 1);
        assert_eq!(d.tensor.get(1, 0, 1), 0.0);
        let mut strict = small_meta();
        strict.missing = MissingPolicy::Error;
        assert!(load_csv(f.path(), &strict).is_err());
    }

    #[test]
    fn non_monday_week_rejected() {
        let f = write_file(&["location,feature,week,value", "a,cases,2021-01-05,1"]);
        assert!(load_csv(f.path(), &small_meta()).is_err());
    }

    fn tiny_scenario() -> ScenarioConfig {
        ScenarioConfig {
            locations: 3,
            weeks: 10,
            period: 4,
            npi_start: 6,
            npi_end: 8,
            test_weeks: 2,
            ..ScenarioConfig::s1(1)
        }
    }

    #[test]
    fn split_shapes() {
        let d = generate_scenario(&tiny_scenario()).unwrap();
        let s = split_at(&d, 6, 10).unwrap();
        assert_eq!(s.x1.dims().times, 6);
        assert_eq!(s.x2.dims().times, 4);
        assert_eq!(s.x1.dims().features, 3);
        assert_eq!(s.x2.dims().features, 4);
        let covid = d.feature_index("covid_cases").unwrap();
        assert_eq!(s.alignment.map[covid], None);
        assert_eq!(s.alignment.map[0], Some(0));
    }

    #[test]
    fn split_by_date_uses_containing_week() {
        let d = generate_scenario(&tiny_scenario()).unwrap();
        let cut = d.weeks[6] + Duration::days(3);
        let s = split(&d, cut, d.weeks[9]).unwrap();
        assert_eq!((s.cut_index, s.end_index), (6, 10));
        let before = d.weeks[0] - Duration::days(1);
        assert!(matches!(split(&d, before, d.weeks[9]), Err(Error::Config { .. })));
    }

    #[test]
    fn split_without_covid_is_identity_alignment() {
        let mut d = generate_scenario(&tiny_scenario()).unwrap();
        d.features[3].role = FeatureRole::Other;
        let s = split_at(&d, 6, 10).unwrap();
        assert_eq!(s.x1.dims().features, s.x2.dims().features);
        assert_eq!(s.alignment.map, vec![Some(0), Some(1), Some(2), Some(3)]);
    }

    #[test]
    fn split_then_concat_reproduces_matched_slice() {
        let d = generate_scenario(&tiny_scenario()).unwrap();
        let s = split_at(&d, 6, 10).unwrap();
        let x2_matched = s.x2.select_features(&s.x1_features).unwrap();
        let joined = s.x1.concat_time(&x2_matched).unwrap();
        let original = d.tensor.slice_time(0, 10).unwrap().select_features(&s.x1_features).unwrap();
        assert_eq!(joined, original);
    }

    #[test]
    fn full_suppression_zeroes_window() {
        let cfg = ScenarioConfig {
            suppression: 1.0,
            ..ScenarioConfig::s1(3)
        };
        let d = generate_scenario(&cfg).unwrap();
        for l in 0..cfg.locations {
            assert!(d.tensor.fiber(l, 0)[cfg.npi_start..cfg.npi_end].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn scenario_is_nonnegative_and_deterministic() {
        let cfg = ScenarioConfig::s1(7);
        let a = generate_scenario(&cfg).unwrap();
        assert!(a.tensor.min_value() >= 0.0);
        assert_eq!(a, generate_scenario(&cfg).unwrap());
        assert_ne!(a.tensor, generate_scenario(&ScenarioConfig::s1(8)).unwrap().tensor);
        let truth = a.truth.as_ref().unwrap();
        assert!(truth.country_peak_week >= cfg.train_end() && truth.country_peak_week < cfg.weeks);
    }

    #[test]
    fn covid_only_after_cut() {
        let d = generate_scenario(&ScenarioConfig::s1(7)).unwrap();
        let covid = d.feature_index("covid_cases").unwrap();
        for l in 0..d.locations.len() {
            assert!(d.tensor.fiber(l, covid)[..d.cut_index].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn cut_week_contains_reference_date() {
        let d = generate_scenario(&ScenarioConfig::s1(7)).unwrap();
        let date = NaiveDate::from_ymd_opt(2020, 3, 15).unwrap();
        assert_eq!(d.week_index(date), Some(d.cut_index));
    }

    #[test]
    fn invalid_suppression_names_field() {
        let cfg = ScenarioConfig {
            suppression: 1.5,
            ..ScenarioConfig::s1(1)
        };
        match generate_scenario(&cfg) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "suppression"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
