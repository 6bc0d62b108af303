//! Dense float64 matrices in column-major layout.
//!
//! This is the storage type for everything in the crate: network weights,
//! latent operators, snapshot windows and single state vectors (as n x 1
//! matrices). The layout is fixed column-major so the on-disk formats are
//! bit-exact across implementations.

use crate::error::{Error, Result};

/// A dense `rows x cols` matrix of `f64`, stored column-major.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl std::fmt::Debug for Matrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.rows * self.cols <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i + i * n] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from values already in column-major order.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidConfig(format!(
                "column-major payload of {} values does not fill a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Convenience constructor from row slices, mainly for tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        Matrix::from_fn(r, c, |i, j| rows[i][j])
    }

    /// A single column vector.
    pub fn col_vec(values: &[f64]) -> Self {
        Matrix {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i + j * self.rows]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i + j * self.rows] = v;
    }

    /// Contiguous view of column `j`.
    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    /// Copies column `j` out as an `n x 1` matrix.
    pub fn column(&self, j: usize) -> Result<Matrix> {
        if j >= self.cols {
            return Err(Error::IndexOutOfBounds {
                op: "column",
                index: j,
                size: self.cols,
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: 1,
            data: self.col(j).to_vec(),
        })
    }

    /// Copies the contiguous column block `[start, start + count)`.
    pub fn columns_range(&self, start: usize, count: usize) -> Result<Matrix> {
        if start + count > self.cols {
            return Err(Error::IndexOutOfBounds {
                op: "columns_range",
                index: start + count,
                size: self.cols,
            });
        }
        Ok(Matrix {
            rows: self.rows,
            cols: count,
            data: self.data[start * self.rows..(start + count) * self.rows].to_vec(),
        })
    }

    /// Standard matrix product. Accumulation order is fixed (axpy over
    /// columns of the right operand) so results are bit-identical for
    /// identical inputs.
    pub fn mat_mul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::DimMismatch {
                op: "mat_mul",
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let m = self.rows;
        let k = self.cols;
        let n = rhs.cols;
        let mut out = Matrix::zeros(m, n);
        for j in 0..n {
            let rhs_col = rhs.col(j);
            let out_col = out.col_mut(j);
            for (l, &b) in rhs_col.iter().enumerate().take(k) {
                let lhs_col = &self.data[l * m..(l + 1) * m];
                for i in 0..m {
                    out_col[i] += b * lhs_col[i];
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn add(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Matrix) -> Result<Matrix> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Matrix, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::DimMismatch {
                op,
                lhs_rows: self.rows,
                lhs_cols: self.cols,
                rhs_rows: rhs.rows,
                rhs_cols: rhs.cols,
            });
        }
        let data = self
            .data
            .iter()
            .zip(rhs.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| c * v).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sum of squared entries.
    pub fn sq_frobenius_norm(&self) -> f64 {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.sq_frobenius_norm().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, &v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

/// Applies `K^kappa` to `z` by `kappa` successive multiplications.
///
/// Powers are never formed via eigendecomposition; the repeated product is
/// the same primitive the tape records, so the value here is bit-identical
/// to the taped path.
pub fn mat_pow_apply(k: &Matrix, z: &Matrix, kappa: usize) -> Result<Matrix> {
    if !k.is_square() {
        return Err(Error::NotSquare {
            op: "mat_pow_apply",
            rows: k.rows(),
            cols: k.cols(),
        });
    }
    let mut cur = z.clone();
    for _ in 0..kappa {
        cur = k.mat_mul(&cur)?;
    }
    Ok(cur)
}

/// `W * X + b * 1^T`: affine map applied to each column of `x`.
///
/// Shared by the plain forward pass and the tape so both produce
/// bit-identical values.
pub fn affine(w: &Matrix, b: &Matrix, x: &Matrix) -> Result<Matrix> {
    if b.rows() != w.rows() || b.cols() != 1 {
        return Err(Error::ShapeMismatch {
            op: "affine bias",
            exp_rows: w.rows(),
            exp_cols: 1,
            rows: b.rows(),
            cols: b.cols(),
        });
    }
    let mut out = w.mat_mul(x)?;
    let rows = out.rows();
    for j in 0..out.cols() {
        let col = out.col_mut(j);
        for i in 0..rows {
            col[i] += b.data[i];
        }
    }
    Ok(out)
}
