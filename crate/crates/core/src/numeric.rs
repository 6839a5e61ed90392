//! Dense f32 kernels used by the entropy transformers.
//!
//! Everything here is deterministic: accumulation happens in f32 in a fixed
//! order, and transcendental functions come from `libm` so results do not
//! depend on the platform's math library. The codec relies on this because
//! the encoder and decoder must derive bit-identical probability tables.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CodecError, Result};

/// Default epsilon for [`layer_norm`].
pub const LAYER_NORM_EPS: f32 = 1e-5;

/// Row-major f32 matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CodecError::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(CodecError::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// A 1×n matrix, used for gains, biases and other vectors.
    pub fn row_vector(values: Vec<f32>) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.rows, "row range out of bounds");
        Matrix {
            rows: end - start,
            cols: self.cols,
            data: self.data[start * self.cols..end * self.cols].to_vec(),
        }
    }

    /// Stacks `self` on top of `other`.
    pub fn vstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(CodecError::Shape(format!(
                "vstack of {} and {} columns",
                self.cols, other.cols
            )));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(CodecError::Shape(format!(
                "add {:?} + {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Adds a 1×cols vector to every row.
    pub fn add_row_vector(&self, bias: &Matrix) -> Result<Matrix> {
        if bias.rows != 1 || bias.cols != self.cols {
            return Err(CodecError::Shape(format!(
                "row bias {:?} for {:?} matrix",
                bias.shape(),
                self.shape()
            )));
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            for (v, b) in out.row_mut(r).iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|v| v.to_le_bytes()).collect()
    }
}

/// `c = a · b`, accumulating over the inner dimension in index order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(CodecError::Shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let (n, m) = (a.rows, b.cols);
    let mut c = Matrix::zeros(n, m);
    // i-k-j order: each c[i][j] still sums a[i][k]*b[k][j] for k = 0, 1, ...
    // so results match the textbook triple loop bit for bit.
    for i in 0..n {
        let a_row = a.row(i);
        let c_row = &mut c.data[i * m..(i + 1) * m];
        for (k, &aik) in a_row.iter().enumerate() {
            let b_row = &b.data[k * m..(k + 1) * m];
            for (cij, &bkj) in c_row.iter_mut().zip(b_row) {
                *cij += aik * bkj;
            }
        }
    }
    Ok(c)
}

/// `c = a · bᵀ` without materializing the transpose.
pub fn matmul_transposed(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(CodecError::Shape(format!(
            "matmul_transposed {}x{} by ({}x{})ᵀ",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut c = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            let br = b.row(j);
            let mut acc = 0.0f32;
            for (x, y) in ar.iter().zip(br) {
                acc += x * y;
            }
            c.data[i * b.rows + j] = acc;
        }
    }
    Ok(c)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(m: &Matrix) -> Result<Matrix> {
    if m.data.iter().any(|v| v.is_nan()) {
        return Err(CodecError::Precondition(
            "softmax input contains NaN".into(),
        ));
    }
    let mut out = m.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = libm::expf(*v - max);
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Per-row normalization to zero mean and unit variance, then `gain * x + bias`.
pub fn layer_norm(x: &Matrix, gain: &[f32], bias: &[f32], eps: f32) -> Result<Matrix> {
    if gain.len() != x.cols || bias.len() != x.cols {
        return Err(CodecError::Shape(format!(
            "layer_norm over {} columns with gain {} / bias {}",
            x.cols,
            gain.len(),
            bias.len()
        )));
    }
    let n = x.cols as f32;
    let mut out = x.clone();
    for r in 0..out.rows {
        let row = out.row_mut(r);
        let mean = row.iter().sum::<f32>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
        let inv = 1.0 / libm::sqrtf(var + eps);
        for ((v, g), b) in row.iter_mut().zip(gain).zip(bias) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    Ok(out)
}

#[inline]
pub fn relu(x: f32) -> f32 {
    x.max(0.0)
}

/// `ln(1 + e^x)`, linear above 20 where the correction is below f32 resolution.
#[inline]
pub fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else {
        libm::log1pf(libm::expf(x))
    }
}

/// Deterministic generator: ChaCha8 keyed by `rand_core`'s `seed_from_u64`
/// expansion of a 64-bit seed.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform on [0, 1) with 24 bits of resolution, exact in f32.
    pub fn unit_f32(&mut self) -> f32 {
        (self.inner.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32)
    }

    /// Uniform on [0, 1) with 53 bits of resolution.
    pub fn unit_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on [-scale, scale).
    pub fn symmetric_f32(&mut self, scale: f32) -> f32 {
        (2.0 * self.unit_f32() - 1.0) * scale
    }

    /// Standard normal via Box-Muller, for test corpora.
    pub fn normal_f64(&mut self) -> f64 {
        let u1 = 1.0 - self.unit_f64();
        let u2 = self.unit_f64();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * std::f64::consts::PI * u2)
    }

    pub fn below(&mut self, n: u32) -> u32 {
        assert!(n > 0);
        ((self.inner.next_u32() as u64 * n as u64) >> 32) as u32
    }
}

/// Matrix with i.i.d. entries uniform on [-scale, scale).
pub fn seeded_matrix(rng: &mut SeededRng, rows: usize, cols: usize, scale: f32) -> Result<Matrix> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(CodecError::Precondition(format!(
            "seeded_matrix scale must be positive, got {scale}"
        )));
    }
    let data = (0..rows * cols).map(|_| rng.symmetric_f32(scale)).collect();
    Ok(Matrix { rows, cols, data })
}
