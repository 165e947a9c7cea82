//! CP decomposition by alternating least squares.
//!
//! With `nonnegative` set, every factor block is updated by HALS column
//! sweeps (exact coordinate minimisation with clipping at zero); otherwise
//! each block is the exact least-squares solution of its normal equations.
//! Both variants are block-coordinate descent, so the objective
//! `‖X − [[A, B, C]]‖²_F` never increases from one sweep to the next.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::tensor::{frobenius_norm, khatri_rao, reconstruct, FactorSet, Matrix, Mode, Tensor3};

const HALS_INNER_SWEEPS: usize = 10;
const HALS_STANDALONE_SWEEPS: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdConfig {
    pub rank: usize,
    pub nonnegative: bool,
    pub max_iters: usize,
    /// Stop once the fit changes by less than this between sweeps.
    pub rel_tol: f64,
    /// Random starts drawn from one seeded stream; the lowest final
    /// objective wins, earliest on ties.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for CpdConfig {
    fn default() -> Self {
        Self {
            rank: 5,
            nonnegative: true,
            max_iters: 500,
            rel_tol: 1e-8,
            restarts: 3,
            seed: 0,
        }
    }
}

impl CpdConfig {
    pub fn new(rank: usize, nonnegative: bool, seed: u64) -> Self {
        Self {
            rank,
            nonnegative,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::config("rank", "must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(Error::config("max_iters", "must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::config("restarts", "must be at least 1"));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::config("rel_tol", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpdResult {
    pub factors: FactorSet,
    /// `1 − ‖X − X̂‖_F / ‖X‖_F`, or 1 for an all-zero input.
    pub fit: f64,
    pub iters_run: usize,
    pub converged: bool,
    /// Squared reconstruction error after every sweep.
    pub objective_trace: Vec<f64>,
    /// Number of block solves that needed ridge jitter.
    pub ridge_events: usize,
}

/// One least-squares block: the `n × K` factor `F` minimising
/// `‖unfolding − kr · Fᵀ‖_F`, optionally subject to `F ≥ 0`.
pub fn factor_update(unfolding: &Matrix, kr: &Matrix, nonnegative: bool) -> Result<Matrix> {
    if kr.rows() != unfolding.rows() {
        return Err(Error::contract(format!(
            "Khatri-Rao product has {} rows but the unfolding has {}",
            kr.rows(),
            unfolding.rows()
        )));
    }
    let mttkrp = unfolding.t_matmul(kr)?;
    let gram = kr.gram();
    let (ls, _) = least_squares_block(&mttkrp, &gram);
    if !nonnegative || ls.min_value() >= 0.0 {
        return Ok(ls);
    }
    // Warm-start HALS from whichever feasible point is better.
    let clipped = Matrix::from_fn(ls.rows(), ls.cols(), |r, c| ls[(r, c)].max(0.0));
    let zero = Matrix::zeros(ls.rows(), ls.cols());
    let mut f = if block_objective(&clipped, &mttkrp, &gram) <= block_objective(&zero, &mttkrp, &gram) {
        clipped
    } else {
        zero
    };
    let mut prev = block_objective(&f, &mttkrp, &gram);
    for _ in 0..HALS_STANDALONE_SWEEPS {
        hals_sweep(&mut f, &mttkrp, &gram);
        let obj = block_objective(&f, &mttkrp, &gram);
        if prev - obj <= 1e-15 * prev.abs().max(1.0) {
            break;
        }
        prev = obj;
    }
    Ok(f)
}

/// `−2 tr(Fᵀ M) + tr(F G Fᵀ)`: the block objective up to the constant `‖U‖²`.
fn block_objective(f: &Matrix, mttkrp: &Matrix, gram: &Matrix) -> f64 {
    let k = f.cols();
    let mut total = 0.0;
    for r in 0..f.rows() {
        let row = f.row(r);
        let mut quad = 0.0;
        for i in 0..k {
            let gi = gram.row(i);
            quad += row[i] * row.iter().zip(gi).map(|(a, b)| a * b).sum::<f64>();
        }
        let lin: f64 = row.iter().zip(mttkrp.row(r)).map(|(a, b)| a * b).sum();
        total += quad - 2.0 * lin;
    }
    total
}

/// `F = M G⁻¹`, returning whether ridge jitter was needed.
fn least_squares_block(mttkrp: &Matrix, gram: &Matrix) -> (Matrix, bool) {
    let (ft, info) = solve_spd(gram, &mttkrp.transpose(), 0.0);
    (ft.transpose(), info.ridge > 0.0)
}

/// One pass of column-wise nonnegative updates
/// `f_k ← max(0, f_k + (M_k − F G_k) / G_kk)`.
fn hals_sweep(f: &mut Matrix, mttkrp: &Matrix, gram: &Matrix) {
    let k = f.cols();
    for j in 0..k {
        let gjj = gram[(j, j)];
        for r in 0..f.rows() {
            if gjj <= 0.0 {
                f[(r, j)] = 0.0;
                continue;
            }
            let fg: f64 = f.row(r).iter().zip(gram.row(j)).map(|(a, b)| a * b).sum();
            let v = f[(r, j)] + (mttkrp[(r, j)] - fg) / gjj;
            f[(r, j)] = v.max(0.0);
        }
    }
}

fn random_factor(rows: usize, rank: usize, nonnegative: bool, rng: &mut ChaCha8Rng) -> Matrix {
    if nonnegative {
        let u = Uniform::new(0.0, 1.0);
        Matrix::from_fn(rows, rank, |_, _| u.sample(rng))
    } else {
        Matrix::from_fn(rows, rank, |_, _| StandardNormal.sample(rng))
    }
}

/// Moves the scale of each component into the temporal factor so that the
/// columns of `A` and `B` have unit norm. The reconstruction is unchanged.
fn normalize_components(f: &mut FactorSet) {
    for k in 0..f.rank() {
        let na = f.a.column(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = f.b.column(k).iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        for r in 0..f.a.rows() {
            f.a[(r, k)] /= na;
        }
        for r in 0..f.b.rows() {
            f.b[(r, k)] /= nb;
        }
        for r in 0..f.c.rows() {
            f.c[(r, k)] *= na * nb;
        }
    }
}

fn squared_error(x: &Tensor3, f: &FactorSet) -> f64 {
    let xhat = reconstruct(f);
    x.as_slice()
        .iter()
        .zip(xhat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Fits `[[A, B, C]]` of the configured rank to `x`.
pub fn cpd_fit(x: &Tensor3, cfg: &CpdConfig) -> Result<CpdResult> {
    cfg.validate()?;
    if x.dims().is_empty() {
        return Err(Error::precondition("cannot factorize an empty tensor"));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite("cpd input"));
    }
    if cfg.nonnegative && x.min_value() < 0.0 {
        return Err(Error::precondition(format!(
            "nonnegative CPD needs a nonnegative tensor, minimum entry is {}",
            x.min_value()
        )));
    }

    let dims = x.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let unfoldings: Vec<Matrix> = Mode::ALL.iter().map(|&m| x.unfold(m)).collect();
    let mut best: Option<CpdResult> = None;
    for _ in 0..cfg.restarts {
        let init = FactorSet::new(
            random_factor(dims.locations, cfg.rank, cfg.nonnegative, &mut rng),
            random_factor(dims.features, cfg.rank, cfg.nonnegative, &mut rng),
            random_factor(dims.times, cfg.rank, cfg.nonnegative, &mut rng),
        )?;
        let run = als(x, &unfoldings, init, cfg)?;
        let better = match &best {
            None => true,
            Some(b) => final_objective(&run) < final_objective(b),
        };
        if better {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

fn final_objective(r: &CpdResult) -> f64 {
    r.objective_trace.last().copied().unwrap_or(f64::INFINITY)
}

fn als(x: &Tensor3, unfoldings: &[Matrix], mut factors: FactorSet, cfg: &CpdConfig) -> Result<CpdResult> {
    let norm_x = frobenius_norm(x);
    let fit_of = |obj: f64| {
        if norm_x == 0.0 {
            1.0
        } else {
            1.0 - obj.max(0.0).sqrt() / norm_x
        }
    };

    let mut trace = Vec::new();
    let mut ridge_events = 0;
    let mut converged = false;
    let mut prev_fit: Option<f64> = None;
    let mut fit = fit_of(squared_error(x, &factors));

    for _ in 0..cfg.max_iters {
        for mode in Mode::ALL {
            let kr = match mode {
                Mode::Location => khatri_rao(&factors.c, &factors.b)?,
                Mode::Feature => khatri_rao(&factors.c, &factors.a)?,
                Mode::Time => khatri_rao(&factors.b, &factors.a)?,
            };
            let unfolding = &unfoldings[mode as usize];
            let mttkrp = unfolding.t_matmul(&kr)?;
            let gram = kr.gram();
            let target = match mode {
                Mode::Location => &mut factors.a,
                Mode::Feature => &mut factors.b,
                Mode::Time => &mut factors.c,
            };
            if cfg.nonnegative {
                for _ in 0..HALS_INNER_SWEEPS {
                    hals_sweep(target, &mttkrp, &gram);
                }
            } else {
                let (f, ridged) = least_squares_block(&mttkrp, &gram);
                ridge_events += usize::from(ridged);
                *target = f;
            }
        }
        normalize_components(&mut factors);

        let obj = squared_error(x, &factors);
        trace.push(obj);
        fit = fit_of(obj);
        if let Some(p) = prev_fit {
            if (fit - p).abs() < cfg.rel_tol {
                converged = true;
                break;
            }
        }
        prev_fit = Some(fit);
    }

    if !factors.a.is_finite() || !factors.b.is_finite() || !factors.c.is_finite() {
        return Err(Error::NonFinite("cpd factors"));
    }

    Ok(CpdResult {
        factors,
        fit,
        iters_run: trace.len(),
        converged,
        objective_trace: trace,
        ridge_events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    fn outer(a: &[f64], b: &[f64], c: &[f64]) -> Tensor3 {
        Tensor3::from_fn(Dims::new(a.len(), b.len(), c.len()), |l, m, t| a[l] * b[m] * c[t])
    }

    #[test]
    fn zero_tensor_fit_is_one() {
        let x = Tensor3::zeros(Dims::new(3, 2, 4));
        let res = cpd_fit(&x, &CpdConfig::new(1, true, 1)).unwrap();
        assert_eq!(res.fit, 1.0);
        assert!(reconstruct(&res.factors).as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exact_rank_one_recovery() {
        let x = outer(&[1.0, 2.0], &[3.0, 4.0], &[5.0, 6.0]);
        let res = cpd_fit(&x, &CpdConfig::new(1, true, 3)).unwrap();
        let err = frobenius_norm(&x.sub(&reconstruct(&res.factors)).unwrap()) / frobenius_norm(&x);
        assert!(err < 1e-6, "relative error {err}");
        assert!(res.factors.is_nonnegative());
    }

    #[test]
    fn rejects_negative_input_when_nonnegative() {
        let x = Tensor3::from_vec(Dims::new(1, 1, 2), vec![1.0, -1.0]).unwrap();
        assert!(matches!(
            cpd_fit(&x, &CpdConfig::new(1, true, 0)),
            Err(Error::Precondition(_))
        ));
        assert!(cpd_fit(&x, &CpdConfig::new(1, false, 0)).is_ok());
    }

    #[test]
    fn config_validation() {
        let mut cfg = CpdConfig::new(0, true, 0);
        assert!(cfg.validate().is_err());
        cfg.rank = 2;
        cfg.rel_tol = 0.0;
        assert!(cfg.validate().is_err());
        cfg.rel_tol = 1e-8;
        cfg.max_iters = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn factor_update_recovers_known_factor() {
        let kr = Matrix::from_fn(12, 3, |r, c| 1.0 + ((r * 7 + c * 3) % 5) as f64 + 0.1 * c as f64);
        let f = Matrix::from_fn(4, 3, |r, c| 0.5 + (r + 2 * c) as f64 * 0.25);
        let unfolding = kr.matmul(&f.transpose()).unwrap();
        for nonneg in [false, true] {
            let got = factor_update(&unfolding, &kr, nonneg).unwrap();
            for (a, b) in got.as_slice().iter().zip(f.as_slice()) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn factor_update_zero_unfolding() {
        let kr = Matrix::from_fn(6, 2, |r, c| (r + c + 1) as f64);
        let got = factor_update(&Matrix::zeros(6, 3), &kr, true).unwrap();
        assert_eq!(got, Matrix::zeros(3, 2));
    }

    #[test]
    fn factor_update_projects_onto_nonnegative_orthant() {
        // The unconstrained optimum has a negative entry.
        let kr = Matrix::from_rows(&[vec![1.0, 0.9], vec![0.9, 1.0], vec![0.5, 0.4]]).unwrap();
        let unfolding = Matrix::from_rows(&[vec![1.0], vec![-0.5], vec![0.2]]).unwrap();
        let ls = factor_update(&unfolding, &kr, false).unwrap();
        assert!(ls.min_value() < 0.0);
        let nn = factor_update(&unfolding, &kr, true).unwrap();
        assert!(nn.min_value() >= 0.0);
        let resid = |f: &Matrix| {
            let fit = kr.matmul(&f.transpose()).unwrap();
            unfolding
                .as_slice()
                .iter()
                .zip(fit.as_slice())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
        };
        assert!(resid(&nn) <= resid(&Matrix::zeros(1, 2)));
    }

    #[test]
    fn factor_update_shape_mismatch() {
        assert!(factor_update(&Matrix::zeros(4, 2), &Matrix::zeros(5, 2), false).is_err());
    }

    #[test]
    fn unconstrained_objective_is_monotone() {
        let dims = Dims::new(4, 3, 9);
        let x = Tensor3::from_fn(dims, |l, m, t| ((l * 31 + m * 17 + t * 7) % 11) as f64 - 5.0);
        let res = cpd_fit(&x, &CpdConfig::new(3, false, 9)).unwrap();
        for w in res.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn same_seed_same_result() {
        let dims = Dims::new(3, 3, 6);
        let x = Tensor3::from_fn(dims, |l, m, t| ((l + 1) * (m + 2)) as f64 + (t as f64).sin().abs());
        let cfg = CpdConfig::new(2, true, 42);
        assert_eq!(cpd_fit(&x, &cfg).unwrap(), cpd_fit(&x, &cfg).unwrap());
    }
}
