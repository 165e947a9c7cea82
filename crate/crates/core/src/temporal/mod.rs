//! Forecasting the rows of a temporal factor matrix from their history.
//!
//! A [`Forecaster`] maps the last `window` rows of a `T × K` matrix to the
//! next row. Multi-step forecasts are recursive: each predicted row is
//! appended to the window before predicting the next one. Columns are
//! standardised with statistics from the training matrix; forecasts are
//! returned in the original units.

mod ar;
mod lstm;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use ar::ArModel;
pub use lstm::{lstm_backward, lstm_forward, LstmParams, LstmStates};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const FORECASTER_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecasterKind {
    Lstm,
    Ar,
}

impl std::str::FromStr for ForecasterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(Self::Lstm),
            "ar" => Ok(Self::Ar),
            other => Err(Error::config("kind", format!("unknown forecaster `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForecasterConfig {
    pub kind: ForecasterKind,
    pub window: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Samples per gradient step.
    pub batch_size: usize,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    /// Half-width of the uniform weight initialisation.
    pub init_scale: f64,
    /// Diagonal added to the AR normal equations.
    pub ridge: f64,
    pub seed: u64,
}

impl Default for ForecasterConfig {
    fn default() -> Self {
        Self {
            kind: ForecasterKind::Lstm,
            window: 52,
            hidden: 16,
            epochs: 50,
            learning_rate: 1e-2,
            batch_size: 1,
            clip_norm: 5.0,
            init_scale: 0.08,
            ridge: 1e-8,
            seed: 0,
        }
    }
}

impl ForecasterConfig {
    pub fn ar(window: usize) -> Self {
        Self {
            kind: ForecasterKind::Ar,
            window,
            ..Self::default()
        }
    }

    pub fn lstm(window: usize, hidden: usize, epochs: usize, seed: u64) -> Self {
        Self {
            kind: ForecasterKind::Lstm,
            window,
            hidden,
            epochs,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("window", "must be at least 1"));
        }
        if self.kind == ForecasterKind::Lstm {
            if self.hidden == 0 {
                return Err(Error::config("hidden", "must be at least 1"));
            }
            if !(self.learning_rate > 0.0) {
                return Err(Error::config("learning_rate", "must be positive"));
            }
            if self.batch_size == 0 {
                return Err(Error::config("batch_size", "must be at least 1"));
            }
            if !(self.clip_norm > 0.0) {
                return Err(Error::config("clip_norm", "must be positive"));
            }
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::config("ridge", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-column affine standardisation `z = (x − shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Column means and population standard deviations; near-constant
    /// columns get scale 1.
    pub fn fit(x: &Matrix) -> Self {
        let (n, k) = x.shape();
        let mut shift = vec![0.0; k];
        let mut scale = vec![1.0; k];
        if n == 0 {
            return Self { shift, scale };
        }
        for c in 0..k {
            let col = x.column(c);
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            shift[c] = mean;
            let sd = var.sqrt();
            scale[c] = if sd > 1e-12 * mean.abs().max(1.0) { sd } else { 1.0 };
        }
        Self { shift, scale }
    }

    pub fn standardize(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |r, c| (x[(r, c)] - self.shift[c]) / self.scale[c])
    }

    pub fn destandardize(&self, z: &Matrix) -> Matrix {
        Matrix::from_fn(z.rows(), z.cols(), |r, c| z[(r, c)] * self.scale[c] + self.shift[c])
    }

    fn destandardize_row(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(c, v)| v * self.scale[c] + self.shift[c])
            .collect()
    }
}

/// One training pair: `window` consecutive rows and the row that follows.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub input: Matrix,
    pub target: Vec<f64>,
}

/// All sliding-window samples of `series` (teacher forcing).
pub fn sequence_samples(series: &Matrix, window: usize) -> Vec<SequenceSample> {
    if window == 0 || series.rows() <= window {
        return Vec::new();
    }
    (0..series.rows() - window)
        .map(|s| SequenceSample {
            input: series.slice_rows(s, s + window),
            target: series.row(s + window).to_vec(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForecastModel {
    Lstm { params: LstmParams },
    Ar { model: ArModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub window: usize,
    /// Row width `K` the model was trained on.
    pub width: usize,
    pub scaler: Standardizer,
    pub model: ForecastModel,
    /// Mean training loss per epoch (LSTM) or the single in-sample MSE (AR),
    /// in standardised units.
    pub loss_trace: Vec<f64>,
}

impl Forecaster {
    pub fn kind(&self) -> ForecasterKind {
        match self.model {
            ForecastModel::Lstm { .. } => ForecasterKind::Lstm,
            ForecastModel::Ar { .. } => ForecasterKind::Ar,
        }
    }

    /// One step ahead in standardised units.
    fn step(&self, window: &Matrix) -> Result<Vec<f64>> {
        match &self.model {
            ForecastModel::Lstm { params } => Ok(lstm_forward(params, window)?.0),
            ForecastModel::Ar { model } => Ok(model.predict(window)),
        }
    }

    /// Next row after `history`, in original units.
    pub fn predict_next(&self, history: &Matrix) -> Result<Vec<f64>> {
        self.check_history(history)?;
        let window = self
            .scaler
            .standardize(&history.slice_rows(history.rows() - self.window, history.rows()));
        Ok(self.scaler.destandardize_row(&self.step(&window)?))
    }

    fn check_history(&self, history: &Matrix) -> Result<()> {
        if history.cols() != self.width {
            return Err(Error::contract(format!(
                "history width {} does not match forecaster width {}",
                history.cols(),
                self.width
            )));
        }
        if history.rows() < self.window {
            return Err(Error::precondition(format!(
                "history has {} rows, forecaster window is {}",
                history.rows(),
                self.window
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = ForecasterDocument {
            schema_version: FORECASTER_SCHEMA_VERSION,
            forecaster: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Forecaster> {
        let doc: ForecasterDocument = serde_json::from_str(text)?;
        if doc.schema_version != FORECASTER_SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "forecaster schema_version {} is not supported",
                doc.schema_version
            )));
        }
        Ok(doc.forecaster)
    }
}

#[derive(Serialize, Deserialize)]
struct ForecasterDocument {
    schema_version: u32,
    forecaster: Forecaster,
}

/// Fits a forecaster to the row sequence of `c`.
pub fn train_forecaster(c: &Matrix, cfg: &ForecasterConfig) -> Result<Forecaster> {
    cfg.validate()?;
    if c.rows() < cfg.window + 1 {
        return Err(Error::precondition(format!(
            "training needs at least window + 1 = {} rows, got {}",
            cfg.window + 1,
            c.rows()
        )));
    }
    if c.cols() == 0 {
        return Err(Error::precondition("training matrix has no columns"));
    }
    if !c.is_finite() {
        return Err(Error::NonFinite("forecaster training data"));
    }
    let scaler = Standardizer::fit(c);
    let z = scaler.standardize(c);
    let (model, loss_trace) = match cfg.kind {
        ForecasterKind::Ar => {
            let (model, mse) = ArModel::fit(&z, cfg.window, cfg.ridge)?;
            (ForecastModel::Ar { model }, vec![mse])
        }
        ForecasterKind::Lstm => {
            let (params, trace) = train_lstm(&z, cfg)?;
            (ForecastModel::Lstm { params }, trace)
        }
    };
    Ok(Forecaster {
        window: cfg.window,
        width: c.cols(),
        scaler,
        model,
        loss_trace,
    })
}

/// Mini-batch gradient descent with global norm clipping.
fn train_lstm(z: &Matrix, cfg: &ForecasterConfig) -> Result<(LstmParams, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = LstmParams::random(z.cols(), cfg.hidden, cfg.init_scale, &mut rng);
    let samples = sequence_samples(z, cfg.window);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut batch_grad = LstmParams::zeros(z.cols(), cfg.hidden);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            batch_grad.values_mut().for_each(|v| *v = 0.0);
            for &i in batch {
                let s = &samples[i];
                let (g, loss) = lstm_backward(&params, &s.input, &s.target)?;
                batch_grad.axpy(1.0 / batch.len() as f64, &g);
                epoch_loss += loss;
            }
            let norm = batch_grad.norm();
            let step = if norm > cfg.clip_norm {
                cfg.learning_rate * cfg.clip_norm / norm
            } else {
                cfg.learning_rate
            };
            params.axpy(-step, &batch_grad);
        }
        trace.push(epoch_loss / samples.len() as f64);
    }
    if !params.is_finite() {
        return Err(Error::NonFinite("lstm training"));
    }
    Ok((params, trace))
}

/// Recursive `horizon`-step forecast continuing `history`.
pub fn forecast(f: &Forecaster, history: &Matrix, horizon: usize) -> Result<Matrix> {
    f.check_history(history)?;
    let mut out = Matrix::zeros(0, f.width);
    if horizon == 0 {
        return Ok(out);
    }
    // The window is kept in original units so that forecasting from a
    // history extended by earlier outputs reproduces the same rows exactly.
    let mut window = history.slice_rows(history.rows() - f.window, history.rows());
    for _ in 0..horizon {
        let next = f.scaler.destandardize_row(&f.step(&f.scaler.standardize(&window))?);
        out.push_row(&next);
        let mut shifted = window.slice_rows(1, f.window);
        shifted.push_row(&next);
        window = shifted;
    }
    if !out.is_finite() {
        return Err(Error::NonFinite("forecast rollout"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn sinusoid(rows: usize, period: f64, amplitude: f64, offset: usize) -> Matrix {
        Matrix::from_fn(rows, 1, |r, _| amplitude * (2.0 * PI * (r + offset) as f64 / period).sin())
    }

    fn rmse(a: &Matrix, b: &Matrix) -> f64 {
        let n = a.as_slice().len() as f64;
        (a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            / n)
            .sqrt()
    }

    #[test]
    fn ar_constant_fixed_point() {
        let c = Matrix::from_fn(10, 2, |_, col| [3.0, -1.5][col]);
        let f = train_forecaster(&c, &ForecasterConfig::ar(2)).unwrap();
        let next = f.predict_next(&c).unwrap();
        assert!((next[0] - 3.0).abs() < 1e-12 && (next[1] + 1.5).abs() < 1e-12);
        let roll = forecast(&f, &c, 10).unwrap();
        assert_eq!(roll.shape(), (10, 2));
        for r in 0..10 {
            assert_eq!(roll.row(r), roll.row(0));
        }
    }

    #[test]
    fn ar_one_step_on_sinusoid() {
        let c = sinusoid(260, 52.0, 1.0, 0);
        let f = train_forecaster(&c, &ForecasterConfig::ar(52)).unwrap();
        let mut sq = 0.0;
        for s in sequence_samples(&c, 52) {
            let p = f.predict_next(&s.input).unwrap();
            sq += (p[0] - s.target[0]).powi(2);
        }
        let one_step = (sq / 208.0).sqrt();
        assert!(one_step < 1e-6, "one-step rmse {one_step}");
    }

    #[test]
    fn ar_rollout_continues_sinusoid() {
        let c = sinusoid(260, 52.0, 1.0, 0);
        let f = train_forecaster(&c, &ForecasterConfig::ar(52)).unwrap();
        let roll = forecast(&f, &c, 52).unwrap();
        let truth = sinusoid(52, 52.0, 1.0, 260);
        assert!(rmse(&roll, &truth) < 1e-4);
    }

    #[test]
    fn ar_exact_on_linear_recurrence() {
        // x_t = 1.6 x_{t-1} − 0.8 x_{t-2} + 0.3, a damped oscillation.
        let mut v = vec![1.0, 0.5];
        for t in 2..80 {
            v.push(1.6 * v[t - 1] - 0.8 * v[t - 2] + 0.3);
        }
        let c = Matrix::from_vec(60, 1, v[..60].to_vec()).unwrap();
        let f = train_forecaster(&c, &ForecasterConfig::ar(3)).unwrap();
        let roll = forecast(&f, &c, 20).unwrap();
        for (i, p) in roll.as_slice().iter().enumerate() {
            assert!((p - v[60 + i]).abs() < 1e-8, "step {i}: {p} vs {}", v[60 + i]);
        }
    }

    #[test]
    fn horizon_zero_is_empty() {
        let c = Matrix::from_fn(6, 3, |r, c| (r + c) as f64);
        let f = train_forecaster(&c, &ForecasterConfig::ar(2)).unwrap();
        assert_eq!(forecast(&f, &c, 0).unwrap().shape(), (0, 3));
    }

    #[test]
    fn too_few_rows_rejected() {
        let c = Matrix::zeros(3, 1);
        assert!(matches!(
            train_forecaster(&c, &ForecasterConfig::ar(3)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn rollout_consistency() {
        let c = Matrix::from_fn(40, 2, |r, k| ((r as f64) * 0.3 + k as f64).sin() + 0.1 * k as f64);
        let f = train_forecaster(&c, &ForecasterConfig::ar(4)).unwrap();
        let out = forecast(&f, &c, 6).unwrap();
        let mut hist = c.clone();
        for i in 0..6 {
            let step = forecast(&f, &hist, 1).unwrap();
            assert_eq!(step.row(0), out.row(i));
            hist.push_row(out.row(i));
        }
    }

    #[test]
    fn standardizer_round_trip() {
        let x = Matrix::from_fn(7, 3, |r, c| (r * r) as f64 * 0.7 - c as f64 * 11.0 + 1e3 * c as f64);
        let s = Standardizer::fit(&x);
        assert!(s.scale.iter().all(|&v| v > 0.0));
        let back = s.destandardize(&s.standardize(&x));
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn lstm_training_is_deterministic() {
        let c = sinusoid(40, 13.0, 2.0, 0);
        let cfg = ForecasterConfig::lstm(5, 4, 3, 99);
        let a = train_forecaster(&c, &cfg).unwrap();
        let b = train_forecaster(&c, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.loss_trace.len(), 3);
    }

    #[test]
    fn lstm_learns_sinusoid() {
        let amplitude = 1.0;
        let c = sinusoid(260, 52.0, amplitude, 0);
        let cfg = ForecasterConfig::lstm(13, 16, 2000, 7);
        let f = train_forecaster(&c, &cfg).unwrap();
        let mut sq = 0.0;
        let samples = sequence_samples(&c, 13);
        for s in &samples {
            sq += (f.predict_next(&s.input).unwrap()[0] - s.target[0]).powi(2);
        }
        let one_step = (sq / samples.len() as f64).sqrt();
        assert!(one_step < 0.05 * amplitude, "one-step rmse {one_step}");
    }

    #[test]
    fn json_round_trip_preserves_forecasts() {
        let c = sinusoid(30, 10.0, 1.5, 2);
        for cfg in [ForecasterConfig::ar(5), ForecasterConfig::lstm(5, 3, 2, 1)] {
            let f = train_forecaster(&c, &cfg).unwrap();
            let back = Forecaster::from_json(&f.to_json().unwrap()).unwrap();
            assert_eq!(back, f);
            assert_eq!(forecast(&back, &c, 7).unwrap(), forecast(&f, &c, 7).unwrap());
        }
    }

    #[test]
    fn json_rejects_unknown_version() {
        let c = sinusoid(30, 10.0, 1.5, 2);
        let f = train_forecaster(&c, &ForecasterConfig::ar(5)).unwrap();
        let text = f.to_json().unwrap().replacen("\"schema_version\": 1", "\"schema_version\": 9", 1);
        assert!(matches!(Forecaster::from_json(&text), Err(Error::Schema(_))));
    }
}
