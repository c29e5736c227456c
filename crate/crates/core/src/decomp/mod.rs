//! Tucker and MPS (tensor-train) decompositions of dense tensors.

mod bundle;
mod mps;
mod tucker;

pub use bundle::{read_bundle, write_bundle, BundleMeta, Decomposition, Method};
pub use mps::{attainable_tt_ranks, mps_reconstruct, tt_svd, validate_chain, MpsCores, RankClamp, TtSvd};
pub use tucker::{hooi, hosvd, tucker_reconstruct, validate_ranks, HooiOptions, HooiResult, TuckerFactors};

pub(crate) use tucker::project_all_but;

use crate::error::{Error, Result};
use crate::tensor::{frobenius_norm, DenseTensor};

/// `||a - b||_F / ||a||_F`, with `0/0` taken as zero.
pub fn relative_error(a: &DenseTensor, b: &DenseTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "relative error of {:?} against {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let diff: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let norm = frobenius_norm(a);
    if norm == 0.0 {
        if diff == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::NonFinite(
            "relative error against a zero reference with a nonzero estimate".into(),
        ));
    }
    Ok(diff / norm)
}
