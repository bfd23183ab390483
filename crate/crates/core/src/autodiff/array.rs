use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::AdError;

/// Dense row-major matrix of `f64`.
///
/// Every value flowing through the tape is two-dimensional. Vectors are
/// `1 x n` or `n x 1`, scalars are `1 x 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Array {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl Array {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AdError> {
        if rows == 0 || cols == 0 || rows * cols != data.len() {
            return Err(AdError::BadShape {
                shape: [rows, cols],
                len: data.len(),
            });
        }
        Ok(Self {
            shape: [rows, cols],
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "array dimensions must be positive");
        Self {
            shape: [rows, cols],
            data: vec![value; rows * cols],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: [1, 1],
            data: vec![value],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut a = Self::zeros(n, n);
        for i in 0..n {
            a.data[i * n + i] = 1.0;
        }
        a
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, AdError> {
        let n = rows.len();
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * d);
        for r in rows {
            let r = r.as_ref();
            if r.len() != d {
                return Err(AdError::BadShape {
                    shape: [n, d],
                    len: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(n, d, data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self {
            shape: [rows, cols],
            data,
        }
    }

    #[inline]
    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.shape[1]
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
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.shape[1];
        self.data[r * cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// The single entry of a `1 x 1` array.
    pub fn as_scalar(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn transpose(&self) -> Array {
        let [r, c] = self.shape;
        Array::from_fn(c, r, |i, j| self.data[j * c + i])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Array {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Array {
            shape: [idx.len().max(1), c],
            data: if idx.is_empty() { vec![0.0; c] } else { data },
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Array) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Largest absolute elementwise difference; `inf` when shapes differ.
    pub fn max_abs_diff(&self, other: &Array) -> f64 {
        if self.shape != other.shape {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `out = a · b`.
pub(crate) fn matmul_nn(a: &Array, b: &Array) -> Array {
    let [n, k] = a.shape;
    let m = b.shape[1];
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Array {
        shape: [n, m],
        data: out,
    }
}

/// `out = a · bᵀ`.
pub(crate) fn matmul_nt(a: &Array, b: &Array) -> Array {
    // Row-streaming over an explicit transpose vectorizes far better than
    // one dot product per output entry.
    matmul_nn(a, &b.transpose())
}

/// `out = aᵀ · b`.
pub(crate) fn matmul_tn(a: &Array, b: &Array) -> Array {
    let [n, k] = a.shape;
    let m = b.shape[1];
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let arow = &a.data[i * k..(i + 1) * k];
        let brow = &b.data[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Array {
        shape: [k, m],
        data: out,
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
