//! Tucker decomposition: HOSVD initialization and HOOI refinement.
//!
//! A rank-`(R_0, ..., R_{N-1})` Tucker tensor is a core of that shape
//! contracted with one `I_k x R_k` factor per mode. CP is the special case
//! of a super-diagonal core and is not represented separately.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::{
    frobenius_norm, mode_n_product, mode_n_product_transposed, symmetric_eigen, truncated_svd,
    unfold, DenseTensor, Matrix,
};

use super::relative_error;

#[derive(Debug, Clone, PartialEq)]
pub struct TuckerFactors {
    core: DenseTensor,
    factors: Vec<Matrix>,
}

impl TuckerFactors {
    pub fn new(core: DenseTensor, factors: Vec<Matrix>) -> Result<Self> {
        if factors.len() != core.order() {
            return Err(Error::Shape(format!(
                "{} factors for a core of order {}",
                factors.len(),
                core.order()
            )));
        }
        for (k, (f, &r)) in factors.iter().zip(core.shape()).enumerate() {
            if f.cols() != r {
                return Err(Error::Shape(format!(
                    "factor {k} has {} columns, core extent is {r}",
                    f.cols()
                )));
            }
            if r > f.rows() {
                return Err(Error::Rank(format!(
                    "rank {r} exceeds dimension {} on mode {k}",
                    f.rows()
                )));
            }
        }
        Ok(Self { core, factors })
    }

    /// Random core and factors with standard normal entries.
    pub fn random<R: Rng>(shape: &[usize], ranks: &[usize], rng: &mut R) -> Result<Self> {
        validate_ranks(shape, ranks)?;
        let n: usize = ranks.iter().product();
        let core = DenseTensor::new(ranks.to_vec(), (0..n).map(|_| rng.sample(StandardNormal)).collect())?;
        let factors = shape
            .iter()
            .zip(ranks)
            .map(|(&i, &r)| Matrix::from_fn(i, r, |_, _| rng.sample(StandardNormal)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(core, factors)
    }

    pub fn core(&self) -> &DenseTensor {
        &self.core
    }

    pub fn factors(&self) -> &[Matrix] {
        &self.factors
    }

    pub fn core_mut(&mut self) -> &mut DenseTensor {
        &mut self.core
    }

    /// Factor matrices, mutable. Shapes must not change.
    pub fn factors_mut(&mut self) -> &mut [Matrix] {
        &mut self.factors
    }

    pub fn order(&self) -> usize {
        self.core.order()
    }

    pub fn ranks(&self) -> &[usize] {
        self.core.shape()
    }

    /// Extents `(I_0, ..., I_{N-1})` of the represented tensor.
    pub fn full_shape(&self) -> Vec<usize> {
        self.factors.iter().map(Matrix::rows).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.core.len() + self.factors.iter().map(|f| f.rows() * f.cols()).sum::<usize>()
    }
}

pub fn validate_ranks(shape: &[usize], ranks: &[usize]) -> Result<()> {
    if ranks.len() != shape.len() {
        return Err(Error::Rank(format!(
            "{} ranks for a tensor of order {}",
            ranks.len(),
            shape.len()
        )));
    }
    for (k, (&r, &i)) in ranks.iter().zip(shape).enumerate() {
        if r == 0 || r > i {
            return Err(Error::Rank(format!(
                "rank {r} on mode {k} must lie in 1..={i}"
            )));
        }
    }
    Ok(())
}

/// `core x_0 U0 x_1 U1 ... x_{N-1} U_{N-1}`.
pub fn tucker_reconstruct(f: &TuckerFactors) -> DenseTensor {
    f.factors
        .iter()
        .enumerate()
        .fold(f.core.clone(), |acc, (k, u)| {
            mode_n_product(&acc, u, k).expect("validated tucker shapes")
        })
}

/// Projects `t` onto the factor subspaces: `t x_k U_k^T` for every mode
/// except `skip`.
pub(crate) fn project_all_but(t: &DenseTensor, factors: &[Matrix], skip: Option<usize>) -> Result<DenseTensor> {
    let mut out = t.clone();
    for (k, u) in factors.iter().enumerate() {
        if Some(k) != skip {
            out = mode_n_product_transposed(&out, u, k)?;
        }
    }
    Ok(out)
}

/// Top-`r` left singular vectors of `m`. Falls back to the full
/// eigenbasis of `m m^T` when `r` exceeds the column count.
fn leading_left_vectors(m: &Matrix, r: usize) -> Result<Matrix> {
    if r <= m.cols() {
        return Ok(truncated_svd(m, r)?.u);
    }
    let (_, vecs) = symmetric_eigen(&m.gram_rows())?;
    let mut u = vecs.leading_columns(r);
    for c in 0..r {
        let col = u.column(c);
        let mut best = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            for row in 0..u.rows() {
                let v = -u.get(row, c);
                u.set(row, c, v);
            }
        }
    }
    Ok(u)
}

/// Truncated higher-order SVD.
pub fn hosvd(t: &DenseTensor, ranks: &[usize]) -> Result<TuckerFactors> {
    validate_ranks(t.shape(), ranks)?;
    let factors = ranks
        .iter()
        .enumerate()
        .map(|(k, &r)| leading_left_vectors(&unfold(t, k)?, r))
        .collect::<Result<Vec<_>>>()?;
    let core = project_all_but(t, &factors, None)?;
    TuckerFactors::new(core, factors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HooiOptions {
    /// Stop once the relative change in fit `1 - rel_error` drops below this.
    pub tol: f64,
    /// Maximum number of full sweeps over the modes.
    pub max_iter: usize,
}

impl Default for HooiOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HooiResult {
    pub factors: TuckerFactors,
    /// Relative reconstruction error: entry 0 is the HOSVD start, then one
    /// entry per accepted sweep. Nonincreasing.
    pub errors: Vec<f64>,
    /// Sweeps performed (accepted or not).
    pub iterations: usize,
}

impl HooiResult {
    pub fn relative_error(&self) -> f64 {
        *self.errors.last().expect("history starts with the HOSVD error")
    }
}

/// Higher-order orthogonal iteration, started from HOSVD.
///
/// A sweep whose error comes out larger than the previous one (rounding
/// noise at convergence) is discarded and iteration stops.
pub fn hooi(t: &DenseTensor, ranks: &[usize], opts: HooiOptions) -> Result<HooiResult> {
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::Rank(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let mut current = hosvd(t, ranks)?;
    let error_of = |f: &TuckerFactors| -> Result<f64> {
        let e = if frobenius_norm(t) == 0.0 {
            0.0
        } else {
            relative_error(t, &tucker_reconstruct(f))?
        };
        if e.is_finite() {
            Ok(e)
        } else {
            Err(Error::NonFinite("HOOI reconstruction error".into()))
        }
    };
    let mut errors = vec![error_of(&current)?];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let mut factors = current.factors.clone();
        for k in 0..t.order() {
            let y = project_all_but(t, &factors, Some(k))?;
            factors[k] = leading_left_vectors(&unfold(&y, k)?, ranks[k])?;
        }
        let core = project_all_but(t, &factors, None)?;
        let candidate = TuckerFactors::new(core, factors)?;
        let err = error_of(&candidate)?;
        let prev = *errors.last().expect("nonempty");
        if err > prev {
            break;
        }
        current = candidate;
        errors.push(err);
        let (fit_prev, fit) = (1.0 - prev, 1.0 - err);
        let change = if fit_prev.abs() > 0.0 {
            (fit - fit_prev).abs() / fit_prev.abs()
        } else {
            (fit - fit_prev).abs()
        };
        if change < opts.tol {
            break;
        }
    }
    Ok(HooiResult {
        factors: current,
        errors,
        iterations,
    })
}
