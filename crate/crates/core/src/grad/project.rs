//! Chain rule through the Tucker map `W = G x_0 U0 ... x_{N-1} U_{N-1}`.

use crate::decomp::{project_all_but, TuckerFactors};
use crate::error::{Error, Result};
use crate::tensor::{mode_n_product, unfold, DenseTensor, Matrix};

/// Gradients with respect to the core and each factor.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerGradients {
    pub d_core: DenseTensor,
    pub d_factors: Vec<Matrix>,
}

impl TuckerGradients {
    /// Largest absolute entry over core and factors.
    pub fn max_abs(&self) -> f64 {
        self.d_core
            .data()
            .iter()
            .chain(self.d_factors.iter().flat_map(|m| m.data()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Maps `dL/dW` onto the Tucker parameters:
/// `dG = dW x_k U_k^T` over all modes and
/// `dU_k = unfold(dW, k) * unfold(G x_{j != k} U_j, k)^T`.
pub fn project_gradients(f: &TuckerFactors, d_w: &DenseTensor) -> Result<TuckerGradients> {
    if d_w.shape() != f.full_shape().as_slice() {
        return Err(Error::Shape(format!(
            "weight gradient {:?} does not match the Tucker tensor {:?}",
            d_w.shape(),
            f.full_shape()
        )));
    }
    let d_core = project_all_but(d_w, f.factors(), None)?;
    let d_factors = (0..f.order())
        .map(|k| {
            let mut partial = f.core().clone();
            for (j, u) in f.factors().iter().enumerate() {
                if j != k {
                    partial = mode_n_product(&partial, u, j)?;
                }
            }
            unfold(d_w, k)?.matmul(&unfold(&partial, k)?.transpose())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TuckerGradients { d_core, d_factors })
}
