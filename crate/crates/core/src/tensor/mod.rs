//! Dense tensors, matrices and the multilinear primitives built on them.
//!
//! Storage is row-major throughout: the last index varies fastest. The
//! mode-n unfolding maps element `(i_0, ..., i_{N-1})` to row `i_n` and
//! column `j = sum_{k != n} i_k * prod_{m > k, m != n} I_m`, i.e. the
//! remaining indices keep their relative order and stay row-major.

mod io;
mod matrix;
mod svd;

pub use io::{read_tensor, read_tensor_file, write_tensor, write_tensor_file, TENSOR_MAGIC};
pub use matrix::Matrix;
pub use svd::{symmetric_eigen, truncated_svd, Svd, JACOBI_MAX_SWEEPS};

use crate::error::{Error, Result};

/// An N-order dense real tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what}: entry {pos} is {}", data[pos])));
    }
    Ok(())
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::Shape("tensor order must be at least 1".into()));
    }
    if shape.contains(&0) {
        return Err(Error::Shape(format!("zero extent in shape {shape:?}")));
    }
    shape.iter().try_fold(1usize, |acc, &d| {
        acc.checked_mul(d)
            .ok_or_else(|| Error::Shape(format!("shape {shape:?} overflows")))
    })
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if data.len() != len {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} entries, got {}",
                data.len()
            )));
        }
        check_finite(&data, "tensor")?;
        Ok(Self { shape, data })
    }

    /// Builds without validation; callers guarantee the invariants.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self::from_parts(shape.to_vec(), vec![0.0; len]))
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_shape(shape)?;
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, shape);
        }
        Self::new(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
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

    /// Mutable access to the raw entries. Writing non-finite values breaks
    /// the finiteness invariant; it is the caller's job not to.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.order() {
            return Err(Error::Index(format!(
                "index of length {} for tensor of order {}",
                index.len(),
                self.order()
            )));
        }
        let mut off = 0;
        for (k, (&i, &d)) in index.iter().zip(&self.shape).enumerate() {
            if i >= d {
                return Err(Error::Index(format!("index {i} >= extent {d} on mode {k}")));
            }
            off = off * d + i;
        }
        Ok(off)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("set({index:?}) = {value}")));
        }
        let off = self.offset(index)?;
        self.data[off] = value;
        Ok(())
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        Ok(Self::from_parts(shape, self.data))
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "axpy on shapes {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "inner product of {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    /// The sub-tensor with the leading modes fixed to `prefix`.
    pub fn subtensor(&self, prefix: &[usize]) -> Result<DenseTensor> {
        if prefix.len() >= self.order() {
            return Err(Error::Index(format!(
                "prefix of length {} leaves nothing of an order-{} tensor",
                prefix.len(),
                self.order()
            )));
        }
        let rest = &self.shape[prefix.len()..];
        let block: usize = rest.iter().product();
        let mut start = 0;
        for (k, (&i, &d)) in prefix.iter().zip(&self.shape).enumerate() {
            if i >= d {
                return Err(Error::Index(format!("index {i} >= extent {d} on mode {k}")));
            }
            start = start * d + i;
        }
        start *= block;
        Ok(Self::from_parts(
            rest.to_vec(),
            self.data[start..start + block].to_vec(),
        ))
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

/// Advances a row-major multi-index; wraps to zero after the last entry.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

fn check_mode(order: usize, n: usize) -> Result<()> {
    if n >= order {
        return Err(Error::InvalidMode { mode: n, order });
    }
    Ok(())
}

/// Splits a shape around mode `n` into (prod before, extent, prod after).
fn split_at_mode(shape: &[usize], n: usize) -> (usize, usize, usize) {
    let left = shape[..n].iter().product();
    let right = shape[n + 1..].iter().product();
    (left, shape[n], right)
}

/// Mode-n unfolding: an `I_n x prod_{k != n} I_k` matrix.
pub fn unfold(t: &DenseTensor, n: usize) -> Result<Matrix> {
    check_mode(t.order(), n)?;
    let (left, dim, right) = split_at_mode(&t.shape, n);
    let cols = left * right;
    let mut out = vec![0.0; dim * cols];
    for l in 0..left {
        for i in 0..dim {
            let src = &t.data[(l * dim + i) * right..][..right];
            out[i * cols + l * right..][..right].copy_from_slice(src);
        }
    }
    Ok(Matrix::from_parts(dim, cols, out))
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, n: usize, shape: &[usize]) -> Result<DenseTensor> {
    let len = check_shape(shape)?;
    check_mode(shape.len(), n)?;
    let (left, dim, right) = split_at_mode(shape, n);
    if m.rows() != dim || m.rows() * m.cols() != len {
        return Err(Error::Shape(format!(
            "{}x{} matrix cannot fold along mode {n} into {shape:?}",
            m.rows(),
            m.cols()
        )));
    }
    let cols = m.cols();
    let src = m.data();
    let mut out = vec![0.0; len];
    for l in 0..left {
        for i in 0..dim {
            out[(l * dim + i) * right..][..right]
                .copy_from_slice(&src[i * cols + l * right..][..right]);
        }
    }
    Ok(DenseTensor::from_parts(shape.to_vec(), out))
}

/// `t x_n m`: contracts mode `n` of `t` with the columns of `m`.
pub fn mode_n_product(t: &DenseTensor, m: &Matrix, n: usize) -> Result<DenseTensor> {
    check_mode(t.order(), n)?;
    let (left, dim, right) = split_at_mode(&t.shape, n);
    if m.cols() != dim {
        return Err(Error::Shape(format!(
            "mode-{n} product needs {dim} matrix columns, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    let rows = m.rows();
    let mut shape = t.shape.clone();
    shape[n] = rows;
    let mut out = vec![0.0; left * rows * right];
    for l in 0..left {
        let src = &t.data[l * dim * right..][..dim * right];
        let dst = &mut out[l * rows * right..][..rows * right];
        for r in 0..rows {
            let acc = &mut dst[r * right..][..right];
            for (i, &w) in m.row(r).iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (a, &x) in acc.iter_mut().zip(&src[i * right..][..right]) {
                    *a += w * x;
                }
            }
        }
    }
    Ok(DenseTensor::from_parts(shape, out))
}

/// `t x_n m^T`, without forming the transpose.
pub fn mode_n_product_transposed(t: &DenseTensor, m: &Matrix, n: usize) -> Result<DenseTensor> {
    mode_n_product(t, &m.transpose(), n)
}

pub fn frobenius_norm(t: &DenseTensor) -> f64 {
    t.data.iter().map(|v| v * v).sum::<f64>().sqrt()
}
