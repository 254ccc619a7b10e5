//! Dense row-major tensors.
//!
//! Everything in this crate is a vector or a matrix, so a rank-1 tensor of
//! length `n` is treated as a `1 × n` row wherever matrix semantics are needed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking `product(shape) == data.len()`. Debug builds
    /// also reject NaN and infinite entries.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 2 || shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "tensor shape must be rank 1 or 2 with positive extents, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                op: "Tensor::new",
                lhs: shape.to_vec(),
                rhs: vec![data.len()],
            });
        }
        if cfg!(debug_assertions) && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(&[rows, cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        let n = data.len();
        Self::new(&[n], data)
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![v],
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        assert!(rows > 0 && cols > 0, "empty tensor {rows}x{cols}");
        Self {
            shape: vec![rows, cols],
            data: vec![v; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "empty tensor {rows}x{cols}");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    /// Row-stacks equally long slices.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map(|x| x.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            let row = row.as_ref();
            if row.len() != c {
                return Err(Error::ShapeMismatch {
                    op: "Tensor::from_rows",
                    lhs: vec![c],
                    rhs: vec![row.len()],
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(&[r, c], data)
    }

    /// Unchecked constructor for results of internal kernels.
    pub(crate) fn raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self {
            shape: vec![rows, cols],
            data,
        }
    }

    /// Unchecked constructor that keeps the shape of `like`.
    pub(crate) fn raw_like(like: &Tensor, data: Vec<f64>) -> Self {
        debug_assert_eq!(like.len(), data.len());
        Self {
            shape: like.shape.clone(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[0]
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        let cols = self.cols();
        self.data[r * cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::NonScalarOutput(self.shape.clone()))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterprets the data with a new shape of equal size.
    pub fn reshaped(mut self, rows: usize, cols: usize) -> Result<Self> {
        if rows * cols != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: vec![rows, cols],
            });
        }
        self.shape = vec![rows, cols];
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::raw(self.rows(), self.cols(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.expect_same_shape(other, "zip_map")?;
        Ok(Tensor::raw(
            self.rows(),
            self.cols(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::raw(c, r, out)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols() != other.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.rows(), self.cols(), other.cols());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, 0.0);
        Ok(Tensor::raw(m, n, out))
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        if self.cols() != other.cols() {
            return Err(Error::ShapeMismatch {
                op: "matmul_t",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let (m, k, n) = (self.rows(), self.cols(), other.rows());
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &other.data, true, &mut out, 0.0);
        Ok(Tensor::raw(m, n, out))
    }

    pub fn add_row(&self, row: &Tensor) -> Result<Tensor> {
        if row.len() != self.cols() {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.shape.clone(),
                rhs: row.shape.clone(),
            });
        }
        let c = self.cols();
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| v + row.data[i % c])
            .collect();
        Ok(Tensor::raw(self.rows(), c, data))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        assert!(!idx.is_empty(), "select_rows with no indices");
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor::raw(idx.len(), c, data)
    }

    /// Columns selected by index, in the given order.
    pub fn select_cols(&self, idx: &[usize]) -> Tensor {
        assert!(!idx.is_empty(), "select_cols with no indices");
        let r = self.rows();
        let mut data = Vec::with_capacity(idx.len() * r);
        for i in 0..r {
            let row = self.row(i);
            data.extend(idx.iter().map(|&j| row[j]));
        }
        Tensor::raw(r, idx.len(), data)
    }

    fn expect_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.rows() != other.rows() || self.cols() != other.cols() {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(())
    }
}

/// `c = a·b + beta·c` for row-major `a` (m×k, or k×m if `a_t`) and `b` (k×n,
/// or n×k if `b_t`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee that every (row, col) offset computed
    // from these strides stays inside the three slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
