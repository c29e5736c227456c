use crate::error::{Error, Result};

use super::{check_finite, DenseTensor};

/// A dense row-major real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Shape(format!("degenerate matrix {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        check_finite(&data, "matrix")?;
        Ok(Self { rows, cols, data })
    }

    pub(crate) fn from_parts(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(rows * cols, data.len());
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_parts(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
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
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        Self::from_parts(self.cols, self.rows, out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let n = other.cols;
        let mut out = vec![0.0; self.rows * n];
        for r in 0..self.rows {
            let dst = &mut out[r * n..(r + 1) * n];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &b) in dst.iter_mut().zip(other.row(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(Self::from_parts(self.rows, n, out))
    }

    /// `self^T * other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply ({}x{})^T by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, n) = (self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for k in 0..self.rows {
            let b = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(b) {
                    *d += a * bv;
                }
            }
        }
        Ok(Self::from_parts(m, n, out))
    }

    /// `self * self^T`, symmetric.
    pub fn gram_rows(&self) -> Matrix {
        let n = self.rows;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            let a = self.row(i);
            for j in i..n {
                let v: f64 = a.iter().zip(self.row(j)).map(|(x, y)| x * y).sum();
                out[i * n + j] = v;
                out[j * n + i] = v;
            }
        }
        Self::from_parts(n, n, out)
    }

    /// `self^T * self`, symmetric.
    pub fn gram_cols(&self) -> Matrix {
        let n = self.cols;
        let mut out = vec![0.0; n * n];
        for r in 0..self.rows {
            let row = self.row(r);
            for (i, &a) in row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for (d, &b) in out[i * n + i..(i + 1) * n].iter_mut().zip(&row[i..]) {
                    *d += a * b;
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                out[i * n + j] = out[j * n + i];
            }
        }
        Self::from_parts(n, n, out)
    }

    /// Keeps the first `k` columns.
    pub fn leading_columns(&self, k: usize) -> Matrix {
        let k = k.min(self.cols);
        let mut out = Vec::with_capacity(self.rows * k);
        for r in 0..self.rows {
            out.extend_from_slice(&self.row(r)[..k]);
        }
        Self::from_parts(self.rows, k, out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if (self.rows, self.cols) != (other.rows, other.cols) {
            return Err(Error::Shape(format!(
                "cannot subtract {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self::from_parts(self.rows, self.cols, data))
    }

    /// Largest entry of `|Q^T Q - I|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.gram_cols();
        let mut worst: f64 = 0.0;
        for i in 0..g.rows {
            for j in 0..g.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
        worst
    }
}

impl From<Matrix> for DenseTensor {
    fn from(m: Matrix) -> Self {
        DenseTensor::from_parts(vec![m.rows, m.cols], m.data)
    }
}

impl TryFrom<DenseTensor> for Matrix {
    type Error = Error;

    fn try_from(t: DenseTensor) -> Result<Self> {
        if t.order() != 2 {
            return Err(Error::Shape(format!(
                "expected an order-2 tensor, got shape {:?}",
                t.shape()
            )));
        }
        let (r, c) = (t.shape()[0], t.shape()[1]);
        Ok(Matrix::from_parts(r, c, t.into_data()))
    }
}
