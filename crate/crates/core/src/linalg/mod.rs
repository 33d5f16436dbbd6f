//! Dense matrices and the symmetric eigensolver behind the diversity loss.
//!
//! Everything here is plain numerics on owned buffers; nothing touches the
//! autodiff tape. The tape's eigendecomposition op calls [`sym_eig`] on the
//! forward pass and [`eig_backward`] on the reverse pass.

pub(crate) mod eig;

pub use eig::{eig_backward, sym_eig, EigenDecomposition, SymmetricMatrix, EIG_GAP_EPS};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArgument {
                op: "matrix",
                reason: format!("{} values for a {rows}x{cols} matrix", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != rows) {
            return Err(Error::InvalidArgument {
                op: "matrix",
                reason: "columns of unequal length".into(),
            });
        }
        Ok(Self::from_fn(rows, cols, |i, j| columns[j][i]))
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
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
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

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: crate::autodiff::Shape::new(self.rows, self.cols),
                right: crate::autodiff::Shape::new(other.rows, other.cols),
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            Operand::plain(&self.data, self.cols),
            Operand::plain(&other.data, other.cols),
            &mut out.data,
            0.0,
        );
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Strided view of a row-major operand for [`gemm`]; `transposed` reads it as
/// its transpose without copying.
#[derive(Clone, Copy)]
pub(crate) struct Operand<'a> {
    pub data: &'a [f64],
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> Operand<'a> {
    /// A row-major matrix with `cols` columns, read as-is.
    pub fn plain(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// A row-major matrix with `cols` columns, read as its transpose.
    pub fn transposed(data: &'a [f64], cols: usize) -> Self {
        Self {
            data,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }
}

/// `c = a·b + beta·c` for an `m×k` by `k×n` product into row-major `c`.
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: Operand, b: Operand, c: &mut [f64], beta: f64) {
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: the strides describe in-bounds views of the borrowed slices
    // (checked by the length asserts), and `c` is a unique m×n row-major buffer.
    debug_assert!(a.data.len() >= m * k && b.data.len() >= k * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Scales every column to unit ℓ2 norm. Columns with norm below `1e-12` are
/// replaced by `e₁`.
pub fn l2_normalize_columns(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for j in 0..m.cols {
        let norm = (0..m.rows).map(|i| m.get(i, j).powi(2)).sum::<f64>().sqrt();
        if norm < NORM_FLOOR {
            for i in 0..m.rows {
                out.set(i, j, if i == 0 { 1.0 } else { 0.0 });
            }
        } else {
            for i in 0..m.rows {
                out.set(i, j, m.get(i, j) / norm);
            }
        }
    }
    out
}

/// Column norms below this are treated as zero by [`l2_normalize_columns`].
pub const NORM_FLOOR: f64 = 1e-12;

/// Rescales to `[0, 1]` by `(λ - min) / (max - min)`. A flat input (range
/// below `1e-12`) maps to all ones.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if range.is_nan() || range < 1e-12 {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| (v - min) / range).collect()
}
