//! Dense matrix/vector primitives and the numerically stable elementary
//! operations everything else is built on.
//!
//! All storage is `f64`, row-major. Constructors reject non-finite values so
//! downstream code can assume finite inputs.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Lower clamp applied to the second argument of [`kl_divergence_rows`].
pub const KL_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumError {
    #[error("data length {len} does not match shape {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("zero-norm row {index} in {operand} operand")]
    ZeroRow { operand: &'static str, index: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),
}

pub type Result<T> = std::result::Result<T, NumError>;

/// Row-major dense matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NumError::BadLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(NumError::NonFinite(i));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(NumError::DimMismatch(cols, r.len()));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Builds a matrix by evaluating `f(row, col)`; the caller guarantees finiteness.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, so special-case empty column counts.
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|x| x * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.row_iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.row_iter() {
            for (o, x) in out.iter_mut().zip(r) {
                *o += x;
            }
        }
        out
    }

    /// Entrywise `self + k * other`.
    pub fn axpy(&self, k: f64, other: &Matrix) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + k * b)
                .collect(),
        })
    }

    /// In-place `self += k * other`.
    pub fn add_scaled(&mut self, k: f64, other: &Matrix) -> Result<()> {
        self.ensure_same_shape(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Matrix) -> Result<Self> {
        if self.cols != other.rows {
            return Err(NumError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (o, b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn ensure_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(NumError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        match self.data.iter().position(|x| !x.is_finite()) {
            Some(i) => Err(NumError::NonFinite(i)),
            None => Ok(()),
        }
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

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in self.row_iter() {
            writeln!(f, "  {r:?}")?;
        }
        write!(f, "]")
    }
}

/// Dense vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(NumError::NonFinite(i));
        }
        Ok(Self(data))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

/// Seeded, stream-separated pseudo-random generator.
///
/// The same `(seed, stream)` pair always yields the same sequence.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Uniform integer in `lo..=hi`.
    pub fn between(&mut self, lo: usize, hi: usize) -> usize {
        self.inner.random_range(lo..=hi)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(NumError::DimMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(NumError::ZeroNorm);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine(a: &Vector, b: &Vector) -> Result<f64> {
    cosine_slices(a.as_slice(), b.as_slice())
}

/// Cosine similarity of plain slices, see [`cosine`].
pub fn cosine_raw(a: &[f64], b: &[f64]) -> Result<f64> {
    cosine_slices(a, b)
}

fn row_norms(m: &Matrix, operand: &'static str) -> Result<Vec<f64>> {
    m.row_iter()
        .enumerate()
        .map(|(index, r)| match norm(r) {
            n if n > 0.0 => Ok(n),
            _ => Err(NumError::ZeroRow { operand, index }),
        })
        .collect()
}

/// Pairwise cosine between the rows of `a` (M×d) and `b` (N×d), giving M×N.
pub fn cosine_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.cols() {
        return Err(NumError::DimMismatch(a.cols(), b.cols()));
    }
    let na = row_norms(a, "left")?;
    let nb = row_norms(b, "right")?;
    Ok(Matrix::from_fn(a.rows(), b.rows(), |i, j| {
        (dot(a.row(i), b.row(j)) / (na[i] * nb[j])).clamp(-1.0, 1.0)
    }))
}

/// Back-propagates `grad` (dL/dS, M×N) through `S = cosine_matrix(a, b)`.
///
/// Returns `(dL/da, dL/db)`. The clamp is treated as the identity.
pub fn cosine_matrix_backward(a: &Matrix, b: &Matrix, grad: &Matrix) -> Result<(Matrix, Matrix)> {
    if grad.shape() != (a.rows(), b.rows()) {
        return Err(NumError::ShapeMismatch {
            left: grad.shape(),
            right: (a.rows(), b.rows()),
        });
    }
    let na = row_norms(a, "left")?;
    let nb = row_norms(b, "right")?;
    let d = a.cols();
    let mut da = Matrix::zeros(a.rows(), d);
    let mut db = Matrix::zeros(b.rows(), d);
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            let g = grad[(i, j)];
            if g == 0.0 {
                continue;
            }
            let (ai, bj) = (a.row(i), b.row(j));
            let s = dot(ai, bj) / (na[i] * nb[j]);
            // d cos / d a = b/(|a||b|) - s a/|a|^2, symmetric for b.
            let ka = g / (na[i] * nb[j]);
            let sa = g * s / (na[i] * na[i]);
            let kb = ka;
            let sb = g * s / (nb[j] * nb[j]);
            for k in 0..d {
                da[(i, k)] += ka * bj[k] - sa * ai[k];
                db[(j, k)] += kb * ai[k] - sb * bj[k];
            }
        }
    }
    Ok((da, db))
}

/// Row-wise `softmax(S / temperature)` using max subtraction.
pub fn row_softmax(s: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(NumError::BadTemperature(temperature));
    }
    let mut out = s.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r), temperature);
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f64], temperature: f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in row.iter_mut() {
        *x = ((*x - max) / temperature).exp();
        z += *x;
    }
    for x in row.iter_mut() {
        *x /= z;
    }
}

/// Row-wise log-softmax of `S / temperature`.
pub fn row_log_softmax(s: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(NumError::BadTemperature(temperature));
    }
    let mut out = s.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = row
            .iter()
            .map(|x| ((x - max) / temperature).exp())
            .sum::<f64>()
            .ln();
        for x in row.iter_mut() {
            *x = (*x - max) / temperature - lse;
        }
    }
    Ok(out)
}

/// Per-row `KL(P_i || Q_i)` with `Q` clamped below at [`KL_FLOOR`].
pub fn kl_rows(p: &Matrix, q: &Matrix) -> Result<Vec<f64>> {
    p.ensure_same_shape(q)?;
    Ok(p
        .row_iter()
        .zip(q.row_iter())
        .map(|(pr, qr)| {
            pr.iter()
                .zip(qr)
                .filter(|(&pi, _)| pi > 0.0)
                .map(|(&pi, &qi)| pi * (pi / qi.max(KL_FLOOR)).ln())
                .sum()
        })
        .collect())
}

/// Mean over rows of `KL(P_i || Q_i)`.
pub fn kl_divergence_rows(p: &Matrix, q: &Matrix) -> Result<f64> {
    let per_row = kl_rows(p, q)?;
    if per_row.is_empty() {
        return Ok(0.0);
    }
    Ok(per_row.iter().sum::<f64>() / per_row.len() as f64)
}
