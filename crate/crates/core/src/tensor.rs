//! Dense three-way tensors, matrices and rank-K CP models.
//!
//! A [`Tensor3`] stores `x(l, m, t)` for location `l`, feature `m` and time
//! `t` in one contiguous buffer, location-major, then feature, then time.
//!
//! Unfoldings follow the tall convention
//!
//! ```text
//! X(1) = (C ⊙ B) Aᵀ   rows t·M + m, columns l      shape (M·T) × L
//! X(2) = (C ⊙ A) Bᵀ   rows t·L + l, columns m      shape (L·T) × M
//! X(3) = (B ⊙ A) Cᵀ   rows m·L + l, columns t      shape (L·M) × T
//! ```
//!
//! so an ALS block solve reads directly as a least-squares problem in the
//! Khatri-Rao product.

use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::contract(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::contract("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn set_column(&mut self, c: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (r, &v) in values.iter().enumerate() {
            self[(r, c)] = v;
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::contract(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let out_row = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `selfᵀ · other` without materialising the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::contract(format!(
                "transposed matmul {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let b_row = other.row(r);
            for (i, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Gram matrix `selfᵀ · self`.
    pub fn gram(&self) -> Matrix {
        self.t_matmul(self).expect("gram shapes always agree")
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Rows `start..end` as a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.rows, "row slice out of range");
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Appends the rows of `other` below `self`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols && self.rows > 0 && other.rows > 0 {
            return Err(Error::contract("vstack column mismatch"));
        }
        let cols = if self.rows > 0 { self.cols } else { other.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    pub fn push_row(&mut self, row: &[f64]) {
        assert_eq!(row.len(), self.cols, "row width mismatch");
        self.data.extend_from_slice(row);
        self.rows += 1;
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// Dimensions of a location × feature × time tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub locations: usize,
    pub features: usize,
    pub times: usize,
}

impl Dims {
    pub fn new(locations: usize, features: usize, times: usize) -> Self {
        Self {
            locations,
            features,
            times,
        }
    }

    pub fn len(&self) -> usize {
        self.locations * self.features * self.times
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tensor modes, numbered 1..=3 in the usual unfolding notation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Location,
    Feature,
    Time,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Location, Mode::Feature, Mode::Time];

    pub fn from_index(mode: usize) -> Result<Mode> {
        match mode {
            1 => Ok(Mode::Location),
            2 => Ok(Mode::Feature),
            3 => Ok(Mode::Time),
            other => Err(Error::contract(format!("mode must be 1, 2 or 3, got {other}"))),
        }
    }
}

/// Dense `L × M × T` tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: Dims,
    data: Vec<f64>,
}

impl Tensor3 {
    /// All-zero tensor. Every dimension may be zero only along time, which
    /// is used for empty forecasts.
    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if dims.locations == 0 || dims.features == 0 {
            return Err(Error::contract("tensor location and feature counts must be >= 1"));
        }
        if data.len() != dims.len() {
            return Err(Error::contract(format!(
                "tensor {}x{}x{} needs {} values, got {}",
                dims.locations,
                dims.features,
                dims.times,
                dims.len(),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims.len());
        for l in 0..dims.locations {
            for m in 0..dims.features {
                for t in 0..dims.times {
                    data.push(f(l, m, t));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn offset(&self, l: usize, m: usize, t: usize) -> usize {
        debug_assert!(l < self.dims.locations && m < self.dims.features && t < self.dims.times);
        (l * self.dims.features + m) * self.dims.times + t
    }

    #[inline]
    pub fn get(&self, l: usize, m: usize, t: usize) -> f64 {
        self.data[self.offset(l, m, t)]
    }

    #[inline]
    pub fn set(&mut self, l: usize, m: usize, t: usize, value: f64) {
        let i = self.offset(l, m, t);
        self.data[i] = value;
    }

    /// Time series at `(l, m)`.
    pub fn fiber(&self, l: usize, m: usize) -> &[f64] {
        debug_assert!(l < self.dims.locations && m < self.dims.features);
        let start = (l * self.dims.features + m) * self.dims.times;
        &self.data[start..start + self.dims.times]
    }

    pub fn fiber_mut(&mut self, l: usize, m: usize) -> &mut [f64] {
        debug_assert!(l < self.dims.locations && m < self.dims.features);
        let start = (l * self.dims.features + m) * self.dims.times;
        let end = start + self.dims.times;
        &mut self.data[start..end]
    }

    /// Weeks `start..end` along the time mode.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<Tensor3> {
        if start > end || end > self.dims.times {
            return Err(Error::contract(format!(
                "time slice {start}..{end} outside 0..{}",
                self.dims.times
            )));
        }
        let dims = Dims::new(self.dims.locations, self.dims.features, end - start);
        Ok(Tensor3::from_fn(dims, |l, m, t| self.get(l, m, start + t)))
    }

    /// Keeps only the listed features, in the given order.
    pub fn select_features(&self, features: &[usize]) -> Result<Tensor3> {
        if features.is_empty() || features.iter().any(|&m| m >= self.dims.features) {
            return Err(Error::contract("feature selection out of range"));
        }
        let dims = Dims::new(self.dims.locations, features.len(), self.dims.times);
        Ok(Tensor3::from_fn(dims, |l, m, t| self.get(l, features[m], t)))
    }

    /// Concatenates `other` after `self` along time.
    pub fn concat_time(&self, other: &Tensor3) -> Result<Tensor3> {
        let (a, b) = (self.dims, other.dims);
        if a.locations != b.locations || a.features != b.features {
            return Err(Error::contract("concat_time shape mismatch"));
        }
        let dims = Dims::new(a.locations, a.features, a.times + b.times);
        Ok(Tensor3::from_fn(dims, |l, m, t| {
            if t < a.times {
                self.get(l, m, t)
            } else {
                other.get(l, m, t - a.times)
            }
        }))
    }

    pub fn scale(&self, alpha: f64) -> Tensor3 {
        Tensor3 {
            dims: self.dims,
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.dims != other.dims {
            return Err(Error::contract("tensor subtraction shape mismatch"));
        }
        Ok(Tensor3 {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.dims != other.dims {
            return Err(Error::contract("tensor addition shape mismatch"));
        }
        Ok(Tensor3 {
            dims: self.dims,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn unfold(&self, mode: Mode) -> Matrix {
        let Dims {
            locations: nl,
            features: nm,
            times: nt,
        } = self.dims;
        let mut out = match mode {
            Mode::Location => Matrix::zeros(nm * nt, nl),
            Mode::Feature => Matrix::zeros(nl * nt, nm),
            Mode::Time => Matrix::zeros(nl * nm, nt),
        };
        for l in 0..nl {
            for m in 0..nm {
                for (t, &v) in self.fiber(l, m).iter().enumerate() {
                    let (r, c) = match mode {
                        Mode::Location => (t * nm + m, l),
                        Mode::Feature => (t * nl + l, m),
                        Mode::Time => (m * nl + l, t),
                    };
                    out[(r, c)] = v;
                }
            }
        }
        out
    }

    /// Inverse of [`Tensor3::unfold`].
    pub fn fold(matrix: &Matrix, mode: Mode, dims: Dims) -> Result<Tensor3> {
        let Dims {
            locations: nl,
            features: nm,
            times: nt,
        } = dims;
        let expected = match mode {
            Mode::Location => (nm * nt, nl),
            Mode::Feature => (nl * nt, nm),
            Mode::Time => (nl * nm, nt),
        };
        if matrix.shape() != expected {
            return Err(Error::contract(format!(
                "cannot fold {:?} matrix into {nl}x{nm}x{nt} along {mode:?}",
                matrix.shape()
            )));
        }
        Ok(Tensor3::from_fn(dims, |l, m, t| {
            let (r, c) = match mode {
                Mode::Location => (t * nm + m, l),
                Mode::Feature => (t * nl + l, m),
                Mode::Time => (m * nl + l, t),
            };
            matrix[(r, c)]
        }))
    }
}

/// Mode-`n` unfolding with the mode given as 1, 2 or 3.
pub fn unfold(x: &Tensor3, mode: usize) -> Result<Matrix> {
    Ok(x.unfold(Mode::from_index(mode)?))
}

pub fn fold(matrix: &Matrix, mode: usize, dims: Dims) -> Result<Tensor3> {
    Tensor3::fold(matrix, Mode::from_index(mode)?, dims)
}

/// Column-wise Kronecker product: column `k` of the result is `a[:, k] ⊗ b[:, k]`,
/// so row `i · b.rows + j` holds `a[i, k] · b[j, k]`.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(Error::contract(format!(
            "khatri_rao needs equal column counts, got {} and {}",
            a.cols(),
            b.cols()
        )));
    }
    let k = a.cols();
    let mut out = Matrix::zeros(a.rows() * b.rows(), k);
    for i in 0..a.rows() {
        let a_row = a.row(i);
        for j in 0..b.rows() {
            let out_row = out.row_mut(i * b.rows() + j);
            for ((o, &x), &y) in out_row.iter_mut().zip(a_row).zip(b.row(j)) {
                *o = x * y;
            }
        }
    }
    Ok(out)
}

pub fn frobenius_norm(x: &Tensor3) -> f64 {
    x.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Rank-K CP model `[[A, B, C]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSet {
    /// Location factors, `L × K`.
    pub a: Matrix,
    /// Feature factors, `M × K`.
    pub b: Matrix,
    /// Temporal factors, `T × K`.
    pub c: Matrix,
}

impl FactorSet {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        if a.cols() == 0 || a.cols() != b.cols() || a.cols() != c.cols() {
            return Err(Error::contract(format!(
                "factor ranks disagree: A has {}, B has {}, C has {} columns",
                a.cols(),
                b.cols(),
                c.cols()
            )));
        }
        Ok(Self { a, b, c })
    }

    pub fn rank(&self) -> usize {
        self.a.cols()
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.a.rows(), self.b.rows(), self.c.rows())
    }

    pub fn is_nonnegative(&self) -> bool {
        [&self.a, &self.b, &self.c]
            .iter()
            .all(|m| m.as_slice().iter().all(|&v| v >= 0.0))
    }

    /// Same location/feature factors with a different temporal factor.
    pub fn with_time_factor(&self, c: Matrix) -> Result<FactorSet> {
        FactorSet::new(self.a.clone(), self.b.clone(), c)
    }
}

/// `x(l, m, t) = Σ_k A(l,k) B(m,k) C(t,k)`.
pub fn reconstruct(f: &FactorSet) -> Tensor3 {
    let dims = f.dims();
    let k = f.rank();
    let mut out = Tensor3::zeros(dims);
    let mut ab = vec![0.0; k];
    for l in 0..dims.locations {
        let a_row = f.a.row(l);
        for m in 0..dims.features {
            for ((p, &x), &y) in ab.iter_mut().zip(a_row).zip(f.b.row(m)) {
                *p = x * y;
            }
            let fiber = out.fiber_mut(l, m);
            for (t, v) in fiber.iter_mut().enumerate() {
                *v = ab.iter().zip(f.c.row(t)).map(|(p, c)| p * c).sum();
            }
        }
    }
    out
}
