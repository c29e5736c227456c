//! Matrix-product-state (tensor-train) form.
//!
//! Core `k` has shape `(R_k, I_k, R_{k+1})` with `R_0 = R_N = 1`, and
//! `W(i_0, ..., i_{N-1}) = G_0[i_0] G_1[i_1] ... G_{N-1}[i_{N-1}]` where
//! `G_k[i]` is the `R_k x R_{k+1}` slice at middle index `i`.
//!
//! Both the element formula and the full reconstruction contract strictly
//! left to right with identical accumulation order, so they agree bit for
//! bit.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{truncated_svd, DenseTensor, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct MpsCores {
    cores: Vec<DenseTensor>,
}

/// Largest attainable TT-rank at each bond: `min(prod_{j<k} I_j, prod_{j>=k} I_j)`.
pub fn attainable_tt_ranks(shape: &[usize]) -> Vec<usize> {
    let n = shape.len();
    (0..=n)
        .map(|k| {
            let left = shape[..k].iter().fold(1usize, |a, &d| a.saturating_mul(d));
            let right = shape[k..].iter().fold(1usize, |a, &d| a.saturating_mul(d));
            left.min(right)
        })
        .collect()
}

pub fn validate_chain(shape: &[usize], chain: &[usize]) -> Result<()> {
    let n = shape.len();
    if chain.len() != n + 1 {
        return Err(Error::Rank(format!(
            "rank chain of length {} for a tensor of order {n} (needs {})",
            chain.len(),
            n + 1
        )));
    }
    if chain[0] != 1 || chain[n] != 1 {
        return Err(Error::Rank(format!(
            "boundary ranks must be 1, got {} and {}",
            chain[0], chain[n]
        )));
    }
    for (k, (&r, &b)) in chain.iter().zip(&attainable_tt_ranks(shape)).enumerate() {
        if r == 0 || r > b {
            return Err(Error::Rank(format!(
                "rank {r} at bond {k} must lie in 1..={b}"
            )));
        }
    }
    Ok(())
}

impl MpsCores {
    pub fn new(cores: Vec<DenseTensor>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::Shape("an MPS needs at least one core".into()));
        }
        for (k, c) in cores.iter().enumerate() {
            if c.order() != 3 {
                return Err(Error::Shape(format!(
                    "core {k} has shape {:?}, expected order 3",
                    c.shape()
                )));
            }
        }
        for k in 1..cores.len() {
            if cores[k - 1].shape()[2] != cores[k].shape()[0] {
                return Err(Error::Rank(format!(
                    "cores {} and {k} disagree on the linking rank ({} vs {})",
                    k - 1,
                    cores[k - 1].shape()[2],
                    cores[k].shape()[0]
                )));
            }
        }
        let shape: Vec<usize> = cores.iter().map(|c| c.shape()[1]).collect();
        let mut chain: Vec<usize> = cores.iter().map(|c| c.shape()[0]).collect();
        chain.push(cores[cores.len() - 1].shape()[2]);
        validate_chain(&shape, &chain)?;
        Ok(Self { cores })
    }

    /// Random cores with standard normal entries.
    pub fn random<R: Rng>(shape: &[usize], chain: &[usize], rng: &mut R) -> Result<Self> {
        validate_chain(shape, chain)?;
        let cores = shape
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let dims = vec![chain[k], i, chain[k + 1]];
                let n = dims.iter().product();
                DenseTensor::new(dims, (0..n).map(|_| rng.sample(StandardNormal)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    pub fn cores(&self) -> &[DenseTensor] {
        &self.cores
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn full_shape(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.shape()[1]).collect()
    }

    /// `(R_0, ..., R_N)`.
    pub fn ranks(&self) -> Vec<usize> {
        let mut chain: Vec<usize> = self.cores.iter().map(|c| c.shape()[0]).collect();
        chain.push(1);
        chain
    }

    pub fn parameter_count(&self) -> usize {
        self.cores.iter().map(DenseTensor::len).sum()
    }

    /// One entry by the chain product of core slices.
    pub fn element(&self, index: &[usize]) -> Result<f64> {
        if index.len() != self.order() {
            return Err(Error::Index(format!(
                "index of length {} for an MPS of order {}",
                index.len(),
                self.order()
            )));
        }
        let mut v = vec![1.0];
        for (k, (core, &i)) in self.cores.iter().zip(index).enumerate() {
            let (r0, n, r1) = (core.shape()[0], core.shape()[1], core.shape()[2]);
            if i >= n {
                return Err(Error::Index(format!("index {i} >= extent {n} on mode {k}")));
            }
            let d = core.data();
            let mut next = vec![0.0; r1];
            for (b, out) in next.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (a, &va) in v.iter().enumerate().take(r0) {
                    acc += va * d[(a * n + i) * r1 + b];
                }
                *out = acc;
            }
            v = next;
        }
        Ok(v[0])
    }

    /// Contracts the cores `lo..hi` with a fixed left boundary vector into
    /// a tensor of shape `(I_lo, ..., I_{hi-1}, R_hi)`, flattened.
    pub(crate) fn contract_from(&self, left: &[f64], lo: usize, hi: usize) -> Vec<f64> {
        let mut acc = left.to_vec();
        let mut prefix = 1usize;
        for core in &self.cores[lo..hi] {
            let (r0, n, r1) = (core.shape()[0], core.shape()[1], core.shape()[2]);
            let d = core.data();
            let mut next = vec![0.0; prefix * n * r1];
            for p in 0..prefix {
                let row = &acc[p * r0..(p + 1) * r0];
                for i in 0..n {
                    for b in 0..r1 {
                        let mut s = 0.0;
                        for (a, &va) in row.iter().enumerate() {
                            s += va * d[(a * n + i) * r1 + b];
                        }
                        next[(p * n + i) * r1 + b] = s;
                    }
                }
            }
            acc = next;
            prefix *= n;
        }
        acc
    }
}

/// Full tensor from an MPS, contracted left to right.
pub fn mps_reconstruct(c: &MpsCores) -> DenseTensor {
    let data = c.contract_from(&[1.0], 0, c.order());
    DenseTensor::new(c.full_shape(), data).expect("finite cores give a finite product")
}

/// A requested bond rank that was lowered to the attainable bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankClamp {
    pub bond: usize,
    pub requested: usize,
    pub used: usize,
}

#[derive(Debug, Clone)]
pub struct TtSvd {
    pub cores: MpsCores,
    pub clamped: Vec<RankClamp>,
}

/// Sequential truncated-SVD sweep producing an MPS with interior ranks
/// `(R_1, ..., R_{N-1})`.
///
/// Ranks above the attainable bound are clamped and reported in
/// [`TtSvd::clamped`]. Zero ranks or a wrong-length list are errors.
pub fn tt_svd(t: &DenseTensor, interior: &[usize]) -> Result<TtSvd> {
    let shape = t.shape();
    let n = shape.len();
    if interior.len() != n - 1 {
        return Err(Error::Rank(format!(
            "{} interior ranks for a tensor of order {n} (needs {})",
            interior.len(),
            n - 1
        )));
    }
    if let Some(k) = interior.iter().position(|&r| r == 0) {
        return Err(Error::Rank(format!("zero rank at bond {}", k + 1)));
    }
    let bound = attainable_tt_ranks(shape);
    let mut clamped = Vec::new();
    let mut cores = Vec::with_capacity(n);
    let mut carry = t.data().to_vec();
    let mut prev = 1usize;
    for k in 0..n - 1 {
        let rows = prev * shape[k];
        let cols = carry.len() / rows;
        let requested = interior[k];
        let used = requested.min(bound[k + 1]).min(rows).min(cols);
        if used != requested {
            clamped.push(RankClamp {
                bond: k + 1,
                requested,
                used,
            });
        }
        let m = Matrix::from_parts(rows, cols, carry);
        let svd = truncated_svd(&m, used)?;
        cores.push(DenseTensor::new(vec![prev, shape[k], used], svd.u.data().to_vec())?);
        carry = svd.u.t_matmul(&m)?.data().to_vec();
        prev = used;
    }
    cores.push(DenseTensor::new(vec![prev, shape[n - 1], 1], carry)?);
    Ok(TtSvd {
        cores: MpsCores::new(cores)?,
        clamped,
    })
}
