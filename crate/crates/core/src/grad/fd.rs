//! Central-difference check of Tucker gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decomp::{tucker_reconstruct, TuckerFactors};
use crate::error::{Error, Result};
use crate::tensor::DenseTensor;

use super::project::{project_gradients, TuckerGradients};

/// A scalar loss of the full weight tensor with its gradient.
pub trait WeightLoss {
    fn value(&self, w: &DenseTensor) -> Result<f64>;
    fn gradient(&self, w: &DenseTensor) -> Result<DenseTensor>;
}

/// `0.5 * ||W - target||^2`, or `0.5 * ||W||^2` without a target.
#[derive(Debug, Clone, Default)]
pub struct QuadraticLoss {
    pub target: Option<DenseTensor>,
}

impl WeightLoss for QuadraticLoss {
    fn value(&self, w: &DenseTensor) -> Result<f64> {
        Ok(0.5 * self.gradient(w)?.data().iter().map(|v| v * v).sum::<f64>())
    }

    fn gradient(&self, w: &DenseTensor) -> Result<DenseTensor> {
        let mut g = w.clone();
        if let Some(t) = &self.target {
            g.axpy(-1.0, t)?;
        }
        Ok(g)
    }
}

/// `<A, W>`.
#[derive(Debug, Clone)]
pub struct LinearLoss {
    pub direction: DenseTensor,
}

impl WeightLoss for LinearLoss {
    fn value(&self, w: &DenseTensor) -> Result<f64> {
        self.direction.inner(w)
    }

    fn gradient(&self, _w: &DenseTensor) -> Result<DenseTensor> {
        Ok(self.direction.clone())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantLoss(pub f64);

impl WeightLoss for ConstantLoss {
    fn value(&self, _w: &DenseTensor) -> Result<f64> {
        Ok(self.0)
    }

    fn gradient(&self, w: &DenseTensor) -> Result<DenseTensor> {
        DenseTensor::zeros(w.shape())
    }
}

/// Flat view over core entries followed by each factor's entries.
pub(crate) fn tucker_param_count(f: &TuckerFactors) -> usize {
    f.parameter_count()
}

fn locate(f: &TuckerFactors, mut p: usize) -> (Option<usize>, usize) {
    if p < f.core().len() {
        return (None, p);
    }
    p -= f.core().len();
    for (k, u) in f.factors().iter().enumerate() {
        let n = u.rows() * u.cols();
        if p < n {
            return (Some(k), p);
        }
        p -= n;
    }
    panic!("parameter index out of range");
}

fn param_mut(f: &mut TuckerFactors, p: usize) -> &mut f64 {
    match locate(f, p) {
        (None, i) => &mut f.core_mut().data_mut()[i],
        (Some(k), i) => &mut f.factors_mut()[k].data_mut()[i],
    }
}

fn grad_at(g: &TuckerGradients, f: &TuckerFactors, p: usize) -> f64 {
    match locate(f, p) {
        (None, i) => g.d_core.data()[i],
        (Some(k), i) => g.d_factors[k].data()[i],
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    pub step: f64,
    /// Check every parameter up to this count, otherwise a random subset.
    pub exhaustive_limit: usize,
    pub subset: usize,
    pub seed: u64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            exhaustive_limit: 10_000,
            subset: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|, floor)`,
    /// with `floor = 1e-3 * max |analytic|` over the probed entries.
    pub max_discrepancy: f64,
    pub probed: usize,
}

/// Compares projected analytic gradients against central differences of
/// `loss(tucker_reconstruct(f))`.
pub fn finite_difference_check(loss: &dyn WeightLoss, f: &TuckerFactors, opts: FdOptions) -> Result<FdReport> {
    if opts.step.is_nan() || opts.step <= 0.0 {
        return Err(Error::Shape(format!("step must be positive, got {}", opts.step)));
    }
    let w = tucker_reconstruct(f);
    let analytic = project_gradients(f, &loss.gradient(&w)?)?;
    let n = tucker_param_count(f);
    let probes: Vec<usize> = if n <= opts.exhaustive_limit {
        (0..n).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut idx = sample(&mut rng, n, opts.subset.min(n)).into_vec();
        idx.sort_unstable();
        idx
    };
    let mut probe = f.clone();
    let mut pairs = Vec::with_capacity(probes.len());
    for &p in &probes {
        let orig = *param_mut(&mut probe, p);
        *param_mut(&mut probe, p) = orig + opts.step;
        let up = loss.value(&tucker_reconstruct(&probe))?;
        *param_mut(&mut probe, p) = orig - opts.step;
        let down = loss.value(&tucker_reconstruct(&probe))?;
        *param_mut(&mut probe, p) = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at parameter {p}")));
        }
        pairs.push((grad_at(&analytic, f, p), (up - down) / (2.0 * opts.step)));
    }
    let floor = 1e-3 * pairs.iter().fold(0.0f64, |m, &(a, _)| m.max(a.abs()));
    let max_discrepancy = pairs
        .iter()
        .map(|&(a, num)| {
            let denom = a.abs().max(num.abs()).max(floor);
            if denom == 0.0 {
                0.0
            } else {
                (a - num).abs() / denom
            }
        })
        .fold(0.0, f64::max);
    Ok(FdReport {
        max_discrepancy,
        probed: probes.len(),
    })
}
