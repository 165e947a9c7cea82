//! Forecast accuracy: RMSE, MAE, peak timing, per-horizon and country-level
//! summaries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_HORIZONS: [usize; 3] = [12, 24, 52];

fn check_pair(actual: &[f64], predicted: &[f64]) -> Result<()> {
    if actual.len() != predicted.len() {
        return Err(Error::contract(format!(
            "series lengths differ: {} vs {}",
            actual.len(),
            predicted.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::precondition("metrics need at least one observation"));
    }
    Ok(())
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    let sse: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p) * (a - p)).sum();
    Ok((sse / actual.len() as f64).sqrt())
}

pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(actual, predicted)?;
    let sae: f64 = actual.iter().zip(predicted).map(|(a, p)| (a - p).abs()).sum();
    Ok(sae / actual.len() as f64)
}

/// Index of the maximum; ties go to the earliest index.
pub fn argmax(series: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in series.iter().enumerate() {
        if v > series[best] {
            best = i;
        }
    }
    best
}

/// `argmax(predicted) − argmax(actual)` in weeks.
pub fn peak_diff(actual: &[f64], predicted: &[f64]) -> Result<i64> {
    if actual.is_empty() || predicted.is_empty() {
        return Err(Error::precondition("peak difference needs nonempty series"));
    }
    Ok(argmax(predicted) as i64 - argmax(actual) as i64)
}

/// Per-week sum over locations.
pub fn aggregate_country(series: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(first) = series.first() else {
        return Ok(Vec::new());
    };
    let mut out = vec![0.0; first.len()];
    for s in series {
        if s.len() != out.len() {
            return Err(Error::contract("location series have different lengths"));
        }
        for (o, v) in out.iter_mut().zip(s) {
            *o += v;
        }
    }
    Ok(out)
}

/// Mean and population standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub location_rmse: Vec<f64>,
    pub location_mae: Vec<f64>,
    pub rmse_mean: f64,
    pub rmse_sd: f64,
    pub mae_mean: f64,
    pub mae_sd: f64,
    pub country_rmse: f64,
    pub country_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakReport {
    /// Week offsets into the forecast window.
    pub actual_peak: usize,
    pub predicted_peak: usize,
    pub peak_diff: i64,
    pub location_peak_diff: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub model: String,
    pub horizons: Vec<HorizonMetrics>,
    /// Country-level peak over the longest horizon.
    pub peak: PeakReport,
}

impl ModelReport {
    pub fn at(&self, horizon: usize) -> Option<&HorizonMetrics> {
        self.horizons.iter().find(|h| h.horizon == horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub locations: Vec<String>,
    pub horizons: Vec<usize>,
    pub sd_convention: String,
    pub models: Vec<ModelReport>,
}

/// Scores one model's count forecasts (`locations × weeks`) against truth.
pub fn evaluate_model(
    model: &str,
    actual: &[Vec<f64>],
    predicted: &[Vec<f64>],
    horizons: &[usize],
) -> Result<ModelReport> {
    if actual.len() != predicted.len() || actual.is_empty() {
        return Err(Error::contract(format!(
            "{model}: {} truth series vs {} forecast series",
            actual.len(),
            predicted.len()
        )));
    }
    let max_h = *horizons
        .iter()
        .max()
        .ok_or_else(|| Error::precondition("no evaluation horizons"))?;
    if horizons.contains(&0) {
        return Err(Error::precondition("evaluation horizons must be at least 1"));
    }
    for (a, p) in actual.iter().zip(predicted) {
        if p.len() < max_h {
            return Err(Error::precondition(format!(
                "{model}: forecast covers {} weeks, horizon {max_h} requested",
                p.len()
            )));
        }
        if a.len() < max_h {
            return Err(Error::precondition(format!(
                "held-out truth covers {} weeks, horizon {max_h} requested",
                a.len()
            )));
        }
    }
    let truncate = |s: &[Vec<f64>], h: usize| s.iter().map(|v| v[..h].to_vec()).collect::<Vec<_>>();

    let mut rows = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let (a, p) = (truncate(actual, h), truncate(predicted, h));
        let location_rmse = a.iter().zip(&p).map(|(a, p)| rmse(a, p)).collect::<Result<Vec<_>>>()?;
        let location_mae = a.iter().zip(&p).map(|(a, p)| mae(a, p)).collect::<Result<Vec<_>>>()?;
        let (rmse_mean, rmse_sd) = mean_sd(&location_rmse);
        let (mae_mean, mae_sd) = mean_sd(&location_mae);
        let (ca, cp) = (aggregate_country(&a)?, aggregate_country(&p)?);
        rows.push(HorizonMetrics {
            horizon: h,
            rmse_mean,
            rmse_sd,
            mae_mean,
            mae_sd,
            country_rmse: rmse(&ca, &cp)?,
            country_mae: mae(&ca, &cp)?,
            location_rmse,
            location_mae,
        });
    }

    let (a, p) = (truncate(actual, max_h), truncate(predicted, max_h));
    let (ca, cp) = (aggregate_country(&a)?, aggregate_country(&p)?);
    let peak = PeakReport {
        actual_peak: argmax(&ca),
        predicted_peak: argmax(&cp),
        peak_diff: peak_diff(&ca, &cp)?,
        location_peak_diff: a.iter().zip(&p).map(|(a, p)| peak_diff(a, p)).collect::<Result<_>>()?,
    };
    Ok(ModelReport {
        model: model.to_string(),
        horizons: rows,
        peak,
    })
}

/// Scores several models against the same truth.
pub fn evaluate(
    locations: &[String],
    actual: &[Vec<f64>],
    forecasts: &[(String, Vec<Vec<f64>>)],
    horizons: &[usize],
) -> Result<EvalReport> {
    let models = forecasts
        .iter()
        .map(|(name, p)| evaluate_model(name, actual, p, horizons))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport {
        locations: locations.to_vec(),
        horizons: horizons.to_vec(),
        sd_convention: "population".to_string(),
        models,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per model and horizon.
    pub fn table_csv(&self) -> String {
        let mut out = String::from("model,horizon,rmse_mean,rmse_sd,mae_mean,mae_sd,country_rmse,country_mae\n");
        for m in &self.models {
            for h in &m.horizons {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    m.model, h.horizon, h.rmse_mean, h.rmse_sd, h.mae_mean, h.mae_sd, h.country_rmse, h.country_mae
                );
            }
        }
        out
    }

    /// Country-level peak timing and error at the longest horizon.
    pub fn peak_csv(&self) -> String {
        let mut out = String::from("model,horizon,actual_peak,predicted_peak,peak_diff,country_rmse,country_mae\n");
        let max_h = self.horizons.iter().copied().max().unwrap_or(0);
        for m in &self.models {
            let (crmse, cmae) = m.at(max_h).map_or((0.0, 0.0), |h| (h.country_rmse, h.country_mae));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                m.model, max_h, m.peak.actual_peak, m.peak.predicted_peak, m.peak.peak_diff, crmse, cmae
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((mae(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 3.5).abs() < 1e-12);
        assert_eq!(rmse(&[2.0], &[-1.5]).unwrap(), 3.5);
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(mae(&[], &[]).is_err());
    }

    #[test]
    fn peaks() {
        let mut a = vec![0.0; 20];
        let mut p = vec![0.0; 20];
        a[10] = 1.0;
        p[12] = 1.0;
        assert_eq!(peak_diff(&a, &p).unwrap(), 2);
        assert_eq!(peak_diff(&a, &a).unwrap(), 0);
        assert_eq!(peak_diff(&a, &[3.0; 20]).unwrap(), -10);
    }

    #[test]
    fn country_sum() {
        assert_eq!(aggregate_country(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(), vec![4.0, 6.0]);
        assert_eq!(aggregate_country(&[vec![1.5, 2.5]]).unwrap(), vec![1.5, 2.5]);
    }

    #[test]
    fn perfect_forecast_is_all_zero() {
        let a: Vec<Vec<f64>> = (0..3).map(|l| (0..52).map(|t| ((t + l) as f64).sin() + 2.0).collect()).collect();
        let r = evaluate_model("x", &a, &a, &DEFAULT_HORIZONS).unwrap();
        for h in &r.horizons {
            assert_eq!((h.rmse_mean, h.rmse_sd, h.mae_mean, h.country_rmse, h.country_mae), (0.0, 0.0, 0.0, 0.0, 0.0));
        }
        assert_eq!(r.peak.peak_diff, 0);
    }

    #[test]
    fn single_location_single_week() {
        let r = evaluate_model("x", &[vec![2.0]], &[vec![5.0]], &[1]).unwrap();
        let h = &r.horizons[0];
        assert_eq!((h.rmse_mean, h.mae_mean, h.rmse_sd, h.country_rmse), (3.0, 3.0, 0.0, 3.0));
    }

    #[test]
    fn horizon_beyond_forecast() {
        assert!(matches!(
            evaluate_model("x", &[vec![1.0; 12]], &[vec![1.0; 12]], &[24]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn population_sd() {
        let (m, s) = mean_sd(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn table_layout() {
        let a = vec![vec![1.0; 24]; 2];
        let r = evaluate(&["a".into(), "b".into()], &a, &[("m1".into(), a.clone()), ("m2".into(), a.clone())], &[12, 24])
            .unwrap();
        let csv = r.table_csv();
        assert_eq!(csv.lines().count(), 1 + 4);
        assert_eq!(r.peak_csv().lines().count(), 3);
    }
}
