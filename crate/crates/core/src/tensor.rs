//! Dense row-major 2-D tensors.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;
use rand::RngExt;

use crate::error::{Error, Result};

/// Storage scalar. Reductions always accumulate in `f64` regardless of `Self`.
///
/// `exp` and `ln` always go through `libm`, so results do not depend on whether
/// some other crate in the build enables `num-traits/std`.
pub trait Real: Float + Default + fmt::Debug + fmt::Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn exp_libm(self) -> Self;
    fn ln_libm(self) -> Self;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    #[inline]
    fn exp_libm(self) -> Self {
        libm::expf(self)
    }
    #[inline]
    fn ln_libm(self) -> Self {
        libm::logf(self)
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    #[inline]
    fn exp_libm(self) -> Self {
        libm::exp(self)
    }
    #[inline]
    fn ln_libm(self) -> Self {
        libm::log(self)
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor({}x{}) ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.iter().take(16)).finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "tensor",
                format!("{} values for a {rows}x{cols} tensor", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: alloc::vec![value; rows * cols],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::filled(1, 1, value)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a tensor from equally sized rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::dim(
                    "from_rows",
                    format!("row {i} has {} columns, expected {cols}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    /// Identity-sized matrix with ones on the diagonal.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    /// I.i.d. standard normal entries (Marsaglia polar method).
    pub fn standard_normal(rows: usize, cols: usize, rng: &mut crate::Rng) -> Self {
        let n = rows * cols;
        let mut data = Vec::with_capacity(n + 1);
        while data.len() < n {
            let u = 2.0 * rng.random::<f64>() - 1.0;
            let v = 2.0 * rng.random::<f64>() - 1.0;
            let s = u * u + v * v;
            if s >= 1.0 || s == 0.0 {
                continue;
            }
            let f = libm::sqrt(-2.0 * libm::log(s) / s);
            data.push(T::from_f64(u * f));
            data.push(T::from_f64(v * f));
        }
        data.truncate(n);
        Self { rows, cols, data }
    }

    /// Row one-hot matrix: row `i` has a single one in column `index[i]`.
    pub fn one_hot(index: &[usize], cols: usize) -> Result<Self> {
        let mut out = Self::zeros(index.len(), cols);
        for (r, &c) in index.iter().enumerate() {
            if c >= cols {
                return Err(Error::dim("one_hot", format!("index {c} >= {cols}")));
            }
            out.data[r * cols + c] = T::one();
        }
        Ok(out)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0f64, |m, v| m.max(v.as_f64().abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    /// Gathers the given rows into a new tensor.
    pub fn select_rows(&self, index: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(index.len() * self.cols);
        for &r in index {
            if r >= self.rows {
                return Err(Error::dim(
                    "select_rows",
                    format!("row {r} out of {}", self.rows),
                ));
            }
            data.extend_from_slice(self.row(r));
        }
        Ok(Self {
            rows: index.len(),
            cols: self.cols,
            data,
        })
    }

    /// `[self | other]` along columns.
    pub fn concat_cols(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(Error::dim(
                "concat_cols",
                format!("{} rows vs {} rows", self.rows, other.rows),
            ));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Self {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// `[self; other]` along rows.
    pub fn concat_rows(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols && !self.is_empty() && !other.is_empty() {
            return Err(Error::dim(
                "concat_rows",
                format!("{} cols vs {} cols", self.cols, other.cols),
            ));
        }
        let cols = if self.is_empty() { other.cols } else { self.cols };
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            rows: self.rows + other.rows,
            cols,
            data,
        })
    }

    /// Column slice `[start, end)`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.cols {
            return Err(Error::dim(
                "slice_cols",
                format!("[{start}, {end}) out of {} columns", self.cols),
            ));
        }
        Ok(Self::from_fn(self.rows, end - start, |r, c| {
            self.get(r, start + c)
        }))
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Plain matrix product with `f64` accumulation.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::dim(
                "matmul",
                format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, other.rows, other.cols
                ),
            ));
        }
        Ok(matmul_raw(self, other))
    }

    /// Index of the largest entry in each row; ties resolve to the smallest column.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows)
            .map(|r| {
                let row = self.row(r);
                let mut best = 0;
                for (c, v) in row.iter().enumerate().skip(1) {
                    if *v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// `a · b` with an `f64` accumulator row; the k-loop order is fixed.
pub(crate) fn matmul_raw<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let a64: Vec<f64> = a.data.iter().map(|v| v.as_f64()).collect();
    let b64: Vec<f64> = b.data.iter().map(|v| v.as_f64()).collect();
    let acc = gemm_f64(&a64, &b64, n, k, m);
    Tensor {
        rows: n,
        cols: m,
        data: acc.into_iter().map(T::from_f64).collect(),
    }
}

/// `aᵀ · b` without materializing the transpose.
pub(crate) fn matmul_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (n, k, m) = (a.cols, a.rows, b.cols);
    let mut at = alloc::vec![0.0f64; n * k];
    for p in 0..k {
        for (i, v) in a.row(p).iter().enumerate() {
            at[i * k + p] = v.as_f64();
        }
    }
    let b64: Vec<f64> = b.data.iter().map(|v| v.as_f64()).collect();
    let acc = gemm_f64(&at, &b64, n, k, m);
    Tensor {
        rows: n,
        cols: m,
        data: acc.into_iter().map(T::from_f64).collect(),
    }
}

/// Row-major `n×k · k×m`, four output rows at a time.
fn gemm_f64(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = alloc::vec![0.0f64; n * m];
    let mut i = 0;
    while i + 4 <= n {
        let (o0, rest) = out[i * m..(i + 4) * m].split_at_mut(m);
        let (o1, rest) = rest.split_at_mut(m);
        let (o2, o3) = rest.split_at_mut(m);
        for p in 0..k {
            let (x0, x1, x2, x3) = (a[i * k + p], a[(i + 1) * k + p], a[(i + 2) * k + p], a[(i + 3) * k + p]);
            let brow = &b[p * m..(p + 1) * m];
            let lanes = o0.iter_mut().zip(o1.iter_mut()).zip(o2.iter_mut()).zip(o3.iter_mut());
            for ((((y0, y1), y2), y3), &bv) in lanes.zip(brow) {
                *y0 += x0 * bv;
                *y1 += x1 * bv;
                *y2 += x2 * bv;
                *y3 += x3 * bv;
            }
        }
        i += 4;
    }
    for i in i..n {
        let o = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let x = a[i * k + p];
            if x == 0.0 {
                continue;
            }
            for (slot, &bv) in o.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *slot += x * bv;
            }
        }
    }
    out
}

/// `a · bᵀ`.
pub(crate) fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    matmul_raw(a, &b.transpose())
}
