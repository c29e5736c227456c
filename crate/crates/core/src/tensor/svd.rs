//! Truncated SVD through a cyclic-Jacobi eigendecomposition of the smaller
//! Gram matrix.
//!
//! Unfoldings of network weight tensors are extremely short and fat, so the
//! Gram matrix on the short side is tiny. Squaring the matrix halves the
//! usable relative precision of the spectrum: singular values below about
//! `1e-6 * sigma_max` are treated as zero and their vectors are replaced by
//! an orthonormal completion.

use crate::error::{Error, Result};

use super::Matrix;

pub const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues below this fraction of the largest are numerical zero.
const GRAM_RANK_CUTOFF: f64 = 1e-12;

/// Thin SVD factors: `m ~= u * diag(s) * v^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn reconstruct(&self) -> Matrix {
        let mut us = self.u.clone();
        let r = self.s.len();
        for row in 0..us.rows() {
            for c in 0..r {
                let v = us.get(row, c) * self.s[c];
                us.set(row, c, v);
            }
        }
        us.matmul(&self.v.transpose()).expect("thin svd shapes agree")
    }
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in nonincreasing order and the matching eigenvectors
/// as the columns of the second matrix.
pub fn symmetric_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let mut m = a.data().to_vec();
    let mut vecs = Matrix::identity(n).data().to_vec();
    let total: f64 = m.iter().map(|v| v * v).sum::<f64>().sqrt();

    let off_norm = |m: &[f64]| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                s += 2.0 * m[p * n + q] * m[p * n + q];
            }
        }
        s.sqrt()
    };

    let mut converged = n == 1 || total == 0.0;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Convergence { iterations: sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (kp, kq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * kp - s * kq;
                    m[k * n + q] = s * kp + c * kq;
                }
                for k in 0..n {
                    let (pk, qk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * pk - s * qk;
                    m[q * n + k] = s * pk + c * qk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let (kp, kq) = (vecs[k * n + p], vecs[k * n + q]);
                    vecs[k * n + p] = c * kp - s * kq;
                    vecs[k * n + q] = s * kp + c * kq;
                }
            }
        }
        let off = off_norm(&m);
        if !off.is_finite() {
            return Err(Error::NonFinite("Jacobi iteration".into()));
        }
        converged = off <= 1e-15 * total;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut sorted = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            sorted[k * n + dst] = vecs[k * n + src];
        }
    }
    Ok((values, Matrix::from_parts(n, n, sorted)))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Projects `v` off `basis` twice (classical re-orthogonalization).
fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let d = dot(v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
    }
}

/// Orthonormalizes `candidates` in order; `None` entries, and candidates
/// that collapse, are replaced by completion vectors drawn from the
/// standard basis.
fn orthonormal_set(candidates: Vec<Option<Vec<f64>>>, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(candidates.len());
    let mut slots: Vec<Option<Vec<f64>>> = Vec::with_capacity(candidates.len());
    for cand in candidates {
        match cand {
            Some(mut v) => {
                orthogonalize(&mut v, &basis);
                if normalize(&mut v) > 1e-8 {
                    basis.push(v.clone());
                    slots.push(Some(v));
                } else {
                    slots.push(None);
                }
            }
            None => slots.push(None),
        }
    }
    let mut next_e = 0;
    for slot in slots.iter_mut().filter(|s| s.is_none()) {
        loop {
            assert!(next_e < dim, "orthonormal completion ran out of directions");
            let mut e = vec![0.0; dim];
            e[next_e] = 1.0;
            next_e += 1;
            orthogonalize(&mut e, &basis);
            if normalize(&mut e) > 1e-6 {
                basis.push(e.clone());
                *slot = Some(e);
                break;
            }
        }
    }
    slots.into_iter().map(|s| s.expect("filled")).collect()
}

fn columns_to_matrix(cols: &[Vec<f64>], rows: usize) -> Matrix {
    let k = cols.len();
    let mut data = vec![0.0; rows * k];
    for (c, col) in cols.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            data[r * k + c] = v;
        }
    }
    Matrix::from_parts(rows, k, data)
}

/// Index of the largest-magnitude entry (first one on ties).
fn dominant(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    best
}

/// Rank-`r` truncated SVD.
///
/// Singular vectors are sign-normalized so that each left vector's
/// largest-magnitude entry is positive. When `r` exceeds the numerical
/// rank the trailing singular values are zero and the vectors are an
/// orthonormal completion.
pub fn truncated_svd(m: &Matrix, r: usize) -> Result<Svd> {
    let (rows, cols) = (m.rows(), m.cols());
    if r == 0 || r > rows.min(cols) {
        return Err(Error::Rank(format!(
            "rank {r} outside 1..={} for a {rows}x{cols} matrix",
            rows.min(cols)
        )));
    }
    let short_fat = rows <= cols;
    let gram = if short_fat { m.gram_rows() } else { m.gram_cols() };
    let (values, vecs) = symmetric_eigen(&gram)?;
    let top = values[0].max(0.0);
    let sigma: Vec<f64> = values[..r]
        .iter()
        .map(|&l| {
            if top > 0.0 && l > GRAM_RANK_CUTOFF * top {
                l.sqrt()
            } else {
                0.0
            }
        })
        .collect();

    // Primary side: eigenvectors of the Gram matrix.
    let primary: Vec<Vec<f64>> = (0..r).map(|c| vecs.column(c)).collect();
    let other_dim = if short_fat { cols } else { rows };
    let derived: Vec<Option<Vec<f64>>> = primary
        .iter()
        .zip(&sigma)
        .map(|(p, &s)| {
            if s == 0.0 {
                return None;
            }
            let pm = Matrix::from_parts(p.len(), 1, p.clone());
            let v = if short_fat { m.t_matmul(&pm) } else { m.matmul(&pm) }
                .expect("gram side shapes agree");
            Some(v.data().iter().map(|x| x / s).collect())
        })
        .collect();
    let derived = orthonormal_set(derived, other_dim);

    let (mut left, mut right) = if short_fat {
        (primary, derived)
    } else {
        (derived, primary)
    };
    for (u, v) in left.iter_mut().zip(right.iter_mut()) {
        if u[dominant(u)] < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    Ok(Svd {
        u: columns_to_matrix(&left, rows),
        s: sigma,
        v: columns_to_matrix(&right, cols),
    })
}
