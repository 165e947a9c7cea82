//! Small symmetric positive (semi)definite solves used by ALS and the AR fit.

use nalgebra::DMatrix;

use crate::tensor::Matrix;

/// Outcome of a regularised solve.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct SolveInfo {
    /// Ridge actually added to the diagonal (0 when the plain system was fine).
    pub ridge: f64,
}

fn to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

/// Solves `gram · X = rhs` for symmetric `gram` (`n × n`) and `rhs` (`n × p`).
///
/// `ridge` is always added to the diagonal. If the Cholesky factor still has
/// a pivot below `1e-13 · trace / n`, a jitter of `1e-10 · trace / n` is added
/// (growing tenfold until the factorisation succeeds).
pub(crate) fn solve_spd(gram: &Matrix, rhs: &Matrix, ridge: f64) -> (Matrix, SolveInfo) {
    let n = gram.rows();
    debug_assert_eq!(gram.cols(), n);
    debug_assert_eq!(rhs.rows(), n);
    let trace = gram.trace();
    if trace <= 0.0 && ridge <= 0.0 {
        return (Matrix::zeros(n, rhs.cols()), SolveInfo::default());
    }
    let scale = trace.max(0.0) / n as f64;
    let g = to_dmatrix(gram);
    let b = to_dmatrix(rhs);
    let mut added = ridge;
    let mut jitter = 1e-10 * scale.max(f64::MIN_POSITIVE);
    for _ in 0..40 {
        let mut a = g.clone();
        for i in 0..n {
            a[(i, i)] += added;
        }
        if let Some(chol) = a.cholesky() {
            let l = chol.l_dirty();
            let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
            if min_pivot > 1e-13 * scale || added > ridge {
                let x = chol.solve(&b);
                let out = Matrix::from_fn(n, rhs.cols(), |r, c| x[(r, c)]);
                return (out, SolveInfo { ridge: added });
            }
        }
        added = ridge + jitter;
        jitter *= 10.0;
    }
    (Matrix::zeros(n, rhs.cols()), SolveInfo { ridge: added })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_well_conditioned_system() {
        let g = Matrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let rhs = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let (x, info) = solve_spd(&g, &rhs, 0.0);
        assert_eq!(info.ridge, 0.0);
        let back = g.matmul(&x).unwrap();
        assert!((back[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((back[(1, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn singular_system_gets_jitter() {
        let g = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let rhs = Matrix::from_rows(&[vec![2.0], vec![2.0]]).unwrap();
        let (x, info) = solve_spd(&g, &rhs, 0.0);
        assert!(info.ridge > 0.0);
        assert!(x.is_finite());
        let back = g.matmul(&x).unwrap();
        assert!((back[(0, 0)] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_gram_returns_zero() {
        let (x, _) = solve_spd(&Matrix::zeros(3, 3), &Matrix::zeros(3, 2), 0.0);
        assert_eq!(x, Matrix::zeros(3, 2));
    }
}
