//! Single-layer LSTM with a linear read-out, trained by BPTT.

use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// LSTM weights.
///
/// The four gates are stacked row-wise in `gates` / `gate_bias`: rows
/// `0..H` input gate, `H..2H` forget gate, `2H..3H` candidate, `3H..4H`
/// output gate. Each gate row acts on the concatenation `[x_t, h_{t-1}]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    /// `4H × (K + H)`.
    pub gates: Matrix,
    pub gate_bias: Vec<f64>,
    /// Read-out `K × H` applied to the final hidden state.
    pub proj: Matrix,
    pub proj_bias: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            input,
            hidden,
            gates: Matrix::zeros(4 * hidden, input + hidden),
            gate_bias: vec![0.0; 4 * hidden],
            proj: Matrix::zeros(input, hidden),
            proj_bias: vec![0.0; input],
        }
    }

    /// Uniform initialisation in `[-scale, scale]`.
    pub fn random<R: Rng>(input: usize, hidden: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(input, hidden);
        let u = Uniform::new_inclusive(-scale, scale);
        p.values_mut().for_each(|v| *v = rng.sample(u));
        p
    }

    pub fn num_params(&self) -> usize {
        self.gates.as_slice().len() + self.gate_bias.len() + self.proj.as_slice().len() + self.proj_bias.len()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.gates
            .as_slice()
            .iter()
            .chain(&self.gate_bias)
            .chain(self.proj.as_slice())
            .chain(&self.proj_bias)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.gates
            .as_mut_slice()
            .iter_mut()
            .chain(self.gate_bias.iter_mut())
            .chain(self.proj.as_mut_slice().iter_mut())
            .chain(self.proj_bias.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &LstmParams) -> bool {
        self.input == other.input && self.hidden == other.hidden
    }

    /// `self += alpha · other`.
    pub fn axpy(&mut self, alpha: f64, other: &LstmParams) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.values_mut().zip(other.values()) {
            *a += alpha * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Hidden/cell sequences and activated gates from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStates {
    /// `w × H`.
    pub hidden: Matrix,
    /// `w × H`.
    pub cell: Matrix,
    /// Activated gates, `w × 4H` in the same order as [`LstmParams::gates`].
    pub gates: Matrix,
}

/// Runs the window through the cell and projects the last hidden state.
pub fn lstm_forward(p: &LstmParams, window: &Matrix) -> Result<(Vec<f64>, LstmStates)> {
    if window.cols() != p.input {
        return Err(Error::contract(format!(
            "window width {} does not match LSTM input {}",
            window.cols(),
            p.input
        )));
    }
    if !window.is_finite() {
        return Err(Error::NonFinite("lstm window"));
    }
    if !p.is_finite() {
        return Err(Error::NonFinite("lstm parameters"));
    }
    let (k, h) = (p.input, p.hidden);
    let steps = window.rows();
    let mut hidden = Matrix::zeros(steps, h);
    let mut cell = Matrix::zeros(steps, h);
    let mut gates = Matrix::zeros(steps, 4 * h);
    let mut z = vec![0.0; k + h];
    let mut h_prev = vec![0.0; h];
    let mut c_prev = vec![0.0; h];

    for t in 0..steps {
        z[..k].copy_from_slice(window.row(t));
        z[k..].copy_from_slice(&h_prev);
        let g_row = gates.row_mut(t);
        for (j, g) in g_row.iter_mut().enumerate() {
            let pre = p.gate_bias[j] + p.gates.row(j).iter().zip(&z).map(|(w, v)| w * v).sum::<f64>();
            *g = if (2 * h..3 * h).contains(&j) {
                pre.tanh()
            } else {
                sigmoid(pre)
            };
        }
        let g_row = gates.row(t);
        for j in 0..h {
            let (i_g, f_g, c_g, o_g) = (g_row[j], g_row[h + j], g_row[2 * h + j], g_row[3 * h + j]);
            let c = f_g * c_prev[j] + i_g * c_g;
            c_prev[j] = c;
            h_prev[j] = o_g * c.tanh();
        }
        cell.row_mut(t).copy_from_slice(&c_prev);
        hidden.row_mut(t).copy_from_slice(&h_prev);
    }

    let prediction = (0..k)
        .map(|r| p.proj_bias[r] + p.proj.row(r).iter().zip(&h_prev).map(|(w, v)| w * v).sum::<f64>())
        .collect();
    Ok((prediction, LstmStates { hidden, cell, gates }))
}

/// Gradient of `‖prediction − target‖²` with respect to every parameter,
/// by backpropagation through time. Returns the gradient and the loss.
pub fn lstm_backward(p: &LstmParams, window: &Matrix, target: &[f64]) -> Result<(LstmParams, f64)> {
    if target.len() != p.input {
        return Err(Error::contract(format!(
            "target width {} does not match LSTM output {}",
            target.len(),
            p.input
        )));
    }
    let (prediction, states) = lstm_forward(p, window)?;
    let (k, h) = (p.input, p.hidden);
    let steps = window.rows();
    let mut grad = LstmParams::zeros(k, h);

    let dy: Vec<f64> = prediction.iter().zip(target).map(|(y, t)| 2.0 * (y - t)).collect();
    let loss = prediction.iter().zip(target).map(|(y, t)| (y - t) * (y - t)).sum();
    if steps == 0 {
        grad.proj_bias.copy_from_slice(&dy);
        return Ok((grad, loss));
    }

    let h_last = states.hidden.row(steps - 1);
    for r in 0..k {
        grad.proj_bias[r] = dy[r];
        for (g, &hv) in grad.proj.row_mut(r).iter_mut().zip(h_last) {
            *g = dy[r] * hv;
        }
    }
    let mut dh = vec![0.0; h];
    for r in 0..k {
        for (d, &w) in dh.iter_mut().zip(p.proj.row(r)) {
            *d += dy[r] * w;
        }
    }

    let mut dc_next = vec![0.0; h];
    let mut da = vec![0.0; 4 * h];
    let mut z = vec![0.0; k + h];
    let zeros = vec![0.0; h];
    for t in (0..steps).rev() {
        let g_row = states.gates.row(t);
        let c_row = states.cell.row(t);
        let c_prev = if t > 0 { states.cell.row(t - 1) } else { &zeros };
        let h_prev = if t > 0 { states.hidden.row(t - 1) } else { &zeros };
        for j in 0..h {
            let (i_g, f_g, c_g, o_g) = (g_row[j], g_row[h + j], g_row[2 * h + j], g_row[3 * h + j]);
            let tanh_c = c_row[j].tanh();
            let d_o = dh[j] * tanh_c;
            let dc = dc_next[j] + dh[j] * o_g * (1.0 - tanh_c * tanh_c);
            let d_i = dc * c_g;
            let d_c = dc * i_g;
            let d_f = dc * c_prev[j];
            dc_next[j] = dc * f_g;
            da[j] = d_i * i_g * (1.0 - i_g);
            da[h + j] = d_f * f_g * (1.0 - f_g);
            da[2 * h + j] = d_c * (1.0 - c_g * c_g);
            da[3 * h + j] = d_o * o_g * (1.0 - o_g);
        }
        z[..k].copy_from_slice(window.row(t));
        z[k..].copy_from_slice(h_prev);
        dh.iter_mut().for_each(|v| *v = 0.0);
        for (j, &d) in da.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.gate_bias[j] += d;
            for (g, &zv) in grad.gates.row_mut(j).iter_mut().zip(&z) {
                *g += d * zv;
            }
            for (dhv, &w) in dh.iter_mut().zip(&p.gates.row(j)[k..]) {
                *dhv += d * w;
            }
        }
    }
    Ok((grad, loss))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_parameters_predict_zero() {
        let p = LstmParams::zeros(3, 4);
        let window = Matrix::from_fn(5, 3, |r, c| (r + c) as f64 - 2.0);
        let (y, states) = lstm_forward(&p, &window).unwrap();
        assert_eq!(y, vec![0.0; 3]);
        assert!(states.cell.as_slice().iter().all(|&v| v == 0.0));
        assert!(states.hidden.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_cell_hand_evaluation() {
        // K = H = 1, one step, x = 1, h0 = c0 = 0.
        let mut p = LstmParams::zeros(1, 1);
        // gate rows: [w_x, w_h], biases
        let w = [(0.5, 0.1, 0.2), (-0.3, 0.4, 0.1), (0.8, -0.2, -0.1), (0.6, 0.3, 0.05)];
        for (j, &(wx, wh, b)) in w.iter().enumerate() {
            p.gates[(j, 0)] = wx;
            p.gates[(j, 1)] = wh;
            p.gate_bias[j] = b;
        }
        p.proj[(0, 0)] = 1.5;
        p.proj_bias[0] = -0.25;

        let i = 1.0 / (1.0 + (-(0.5 + 0.2f64)).exp());
        let g = (0.8f64 - 0.1).tanh();
        let o = 1.0 / (1.0 + (-(0.6 + 0.05f64)).exp());
        let c = i * g; // forget gate multiplies c0 = 0
        let h = o * c.tanh();
        let expected = 1.5 * h - 0.25;

        let window = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let (y, _) = lstm_forward(&p, &window).unwrap();
        assert!((y[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn forward_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = LstmParams::random(3, 4, 0.08, &mut rng);
        let window = Matrix::from_fn(5, 3, |r, c| (r as f64 * 0.1) - c as f64 * 0.2);
        let (y, states) = lstm_forward(&p, &window).unwrap();
        assert_eq!(y.len(), 3);
        assert_eq!(states.hidden.shape(), (5, 4));
        assert_eq!(states.cell.shape(), (5, 4));
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = LstmParams::zeros(2, 2);
        assert!(matches!(
            lstm_forward(&p, &Matrix::zeros(3, 3)),
            Err(Error::Contract(_))
        ));
        let bad = Matrix::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(matches!(lstm_forward(&p, &bad), Err(Error::NonFinite(_))));
    }

    #[test]
    fn zero_parameters_zero_target_zero_gradient() {
        let p = LstmParams::zeros(2, 3);
        let window = Matrix::from_fn(4, 2, |r, c| (r * 2 + c) as f64 * 0.3);
        let (g, loss) = lstm_backward(&p, &window, &[0.0, 0.0]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.values().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_linear_in_residual() {
        // For fixed prediction y, residual r = y − target enters linearly:
        // doubling r doubles every gradient.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = LstmParams::random(2, 3, 0.5, &mut rng);
        let window = Matrix::from_fn(4, 2, |r, c| ((r * 3 + c) as f64).sin());
        let (y, _) = lstm_forward(&p, &window).unwrap();
        let t1: Vec<f64> = y.iter().map(|v| v - 0.3).collect();
        let t2: Vec<f64> = y.iter().map(|v| v - 0.6).collect();
        let (g1, _) = lstm_backward(&p, &window, &t1).unwrap();
        let (g2, _) = lstm_backward(&p, &window, &t2).unwrap();
        for (a, b) in g1.values().zip(g2.values()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = LstmParams::random(2, 3, 0.5, &mut rng);
        let window = Matrix::from_fn(4, 2, |r, c| ((r * 5 + c * 2) as f64 * 0.37).cos());
        let target = [0.3, -0.7];
        let (g, _) = lstm_backward(&p, &window, &target).unwrap();
        let loss = |q: &LstmParams| {
            let (y, _) = lstm_forward(q, &window).unwrap();
            y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let analytic: Vec<f64> = g.values().copied().collect();
        let step = 1e-5;
        for (i, &an) in analytic.iter().enumerate() {
            let mut plus = p.clone();
            let mut minus = p.clone();
            *plus.values_mut().nth(i).unwrap() += step;
            *minus.values_mut().nth(i).unwrap() -= step;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * step);
            let denom = an.abs().max(num.abs()).max(1e-8);
            assert!((an - num).abs() / denom < 1e-4, "param {i}: {an} vs {num}");
        }
    }
}
