//! Least-squares vector autoregression on lagged rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::tensor::Matrix;

/// `y_t = Σ_j W_j y_{t−w+j} + b`, stored as one `(w·K) × K` coefficient
/// block whose rows follow the window order (oldest row first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub coefficients: Matrix,
    pub intercept: Vec<f64>,
}

impl ArModel {
    /// Ordinary least squares on every length-`window` slice of `series`,
    /// with `ridge` added to the normal equations.
    pub fn fit(series: &Matrix, window: usize, ridge: f64) -> Result<(ArModel, f64)> {
        let (n, k) = series.shape();
        if window == 0 || n <= window {
            return Err(Error::precondition(format!(
                "AR fit needs more than {window} rows, got {n}"
            )));
        }
        let samples = n - window;
        let dim = window * k + 1;
        let design = Matrix::from_fn(samples, dim, |s, j| {
            if j + 1 == dim {
                1.0
            } else {
                series[(s + j / k, j % k)]
            }
        });
        let targets = series.slice_rows(window, n);
        let gram = design.gram();
        let rhs = design.t_matmul(&targets)?;
        let (beta, _) = solve_spd(&gram, &rhs, ridge);
        let model = ArModel {
            coefficients: beta.slice_rows(0, dim - 1),
            intercept: beta.row(dim - 1).to_vec(),
        };
        let fitted = design.matmul(&beta)?;
        let mse = fitted
            .as_slice()
            .iter()
            .zip(targets.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / samples as f64;
        Ok((model, mse))
    }

    pub fn predict(&self, window: &Matrix) -> Vec<f64> {
        let mut out = self.intercept.clone();
        for (j, &v) in window.as_slice().iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            for (o, &c) in out.iter_mut().zip(self.coefficients.row(j)) {
                *o += v * c;
            }
        }
        out
    }
}
