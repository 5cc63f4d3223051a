use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
///
/// Batches are laid out one sample per row, features along columns.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Checked constructor: length must match and every entry must be finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite matrix entry {bad}")));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Unchecked constructor for kernel outputs whose shape is known.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Matrix { rows, cols, data }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("Matrix::from_rows", "ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn row_vector(values: Vec<f64>) -> Self {
        Matrix::from_raw(1, values.len(), values)
    }

    pub fn scalar(value: f64) -> Self {
        Matrix::from_raw(1, 1, vec![value])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Value of a 1x1 matrix.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1);
        self.data[0]
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", self.shape(), other.shape()),
            ));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            GemmArgs {
                m: self.rows,
                k: self.cols,
                n: other.cols,
                a: &self.data,
                a_strides: (self.cols, 1),
                b: &other.data,
                b_strides: (other.cols, 1),
                beta: 0.0,
            },
            &mut out.data,
            (other.cols, 1),
        );
        Ok(out)
    }

    pub(crate) fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_raw(
            self.rows,
            self.cols,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

pub(crate) struct GemmArgs<'a> {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub a: &'a [f64],
    pub a_strides: (usize, usize),
    pub b: &'a [f64],
    pub b_strides: (usize, usize),
    pub beta: f64,
}

/// `C = A·B + beta·C` with explicit (row, col) strides, so transposed
/// operands are free.
pub(crate) fn gemm(args: GemmArgs<'_>, c: &mut [f64], c_strides: (usize, usize)) {
    let GemmArgs {
        m,
        k,
        n,
        a,
        a_strides,
        b,
        b_strides,
        beta,
    } = args;
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        if rows == 0 || cols == 0 {
            0
        } else {
            (rows - 1) * rs + (cols - 1) * cs + 1
        }
    };
    assert!(a.len() >= last(m, k, a_strides), "gemm: A out of bounds");
    assert!(b.len() >= last(k, n, b_strides), "gemm: B out of bounds");
    assert!(c.len() >= last(m, n, c_strides), "gemm: C out of bounds");
    // SAFETY: the asserts above bound every index the kernel touches, and
    // `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}

/// `y = x·Wᵀ + b` for `x: n×in`, `W: out×in`, `b: 1×out`.
pub(crate) fn linear_kernel(x: &Matrix, w: &Matrix, b: Option<&Matrix>) -> Matrix {
    let (n, inp) = x.shape();
    let out = w.rows();
    let mut y = match b {
        Some(b) => {
            let mut y = Vec::with_capacity(n * out);
            for _ in 0..n {
                y.extend_from_slice(b.data());
            }
            y
        }
        None => vec![0.0; n * out],
    };
    gemm(
        GemmArgs {
            m: n,
            k: inp,
            n: out,
            a: x.data(),
            a_strides: (inp, 1),
            b: w.data(),
            b_strides: (1, inp),
            beta: if b.is_some() { 1.0 } else { 0.0 },
        },
        &mut y,
        (out, 1),
    );
    Matrix::from_raw(n, out, y)
}

pub(crate) fn check_linear(x: &Matrix, w: &Matrix, b: Option<&Matrix>) -> Result<()> {
    if x.cols() != w.cols() {
        return Err(Error::shape(
            "linear",
            format!("input width {} but weight is {:?}", x.cols(), w.shape()),
        ));
    }
    if let Some(b) = b {
        if b.shape() != (1, w.rows()) {
            return Err(Error::shape(
                "linear",
                format!("bias {:?} for {} outputs", b.shape(), w.rows()),
            ));
        }
    }
    Ok(())
}

impl<'a> From<&'a Matrix> for Cow<'a, Matrix> {
    fn from(m: &'a Matrix) -> Self {
        Cow::Borrowed(m)
    }
}

impl From<Matrix> for Cow<'_, Matrix> {
    fn from(m: Matrix) -> Self {
        Cow::Owned(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn transpose_and_matmul() {
        let a = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]).unwrap();
        let at = a.transpose();
        assert_eq!(at.shape(), (3, 2));
        let p = a.matmul(&at).unwrap();
        assert_eq!(p.data(), &[14.0, 32.0, 32.0, 77.0]);
        assert!(a.matmul(&a).is_err());
    }
}
