//! On-disk decomposition bundles.
//!
//! A bundle is a directory holding the factors as `TNT1` files plus a
//! `meta.json` manifest. Tucker bundles have `core.tnt` and
//! `factors0.tnt ... factors{N-1}.tnt`; MPS bundles have
//! `core0.tnt ... core{N-1}.tnt`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_tensor_file, write_tensor_file, DenseTensor, Matrix};

use super::{mps_reconstruct, tucker_reconstruct, MpsCores, TuckerFactors};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Tucker,
    Mps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub method: Method,
    pub shape: Vec<usize>,
    /// Tucker ranks, or the full MPS chain including the boundary ones.
    pub ranks: Vec<usize>,
    pub relative_error: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decomposition {
    Tucker(TuckerFactors),
    Mps(MpsCores),
}

impl Decomposition {
    pub fn method(&self) -> Method {
        match self {
            Decomposition::Tucker(_) => Method::Tucker,
            Decomposition::Mps(_) => Method::Mps,
        }
    }

    pub fn full_shape(&self) -> Vec<usize> {
        match self {
            Decomposition::Tucker(f) => f.full_shape(),
            Decomposition::Mps(c) => c.full_shape(),
        }
    }

    pub fn ranks(&self) -> Vec<usize> {
        match self {
            Decomposition::Tucker(f) => f.ranks().to_vec(),
            Decomposition::Mps(c) => c.ranks(),
        }
    }

    pub fn reconstruct(&self) -> DenseTensor {
        match self {
            Decomposition::Tucker(f) => tucker_reconstruct(f),
            Decomposition::Mps(c) => mps_reconstruct(c),
        }
    }
}

pub fn write_bundle(dir: impl AsRef<Path>, d: &Decomposition, relative_error: f64, iterations: usize) -> Result<BundleMeta> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    match d {
        Decomposition::Tucker(f) => {
            write_tensor_file(dir.join("core.tnt"), f.core())?;
            for (k, u) in f.factors().iter().enumerate() {
                write_tensor_file(dir.join(format!("factors{k}.tnt")), &u.clone().into())?;
            }
        }
        Decomposition::Mps(c) => {
            for (k, core) in c.cores().iter().enumerate() {
                write_tensor_file(dir.join(format!("core{k}.tnt")), core)?;
            }
        }
    }
    let meta = BundleMeta {
        method: d.method(),
        shape: d.full_shape(),
        ranks: d.ranks(),
        relative_error,
        iterations,
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(meta)
}

pub fn read_bundle(dir: impl AsRef<Path>) -> Result<(Decomposition, BundleMeta)> {
    let dir = dir.as_ref();
    let meta: BundleMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    let order = meta.shape.len();
    let d = match meta.method {
        Method::Tucker => {
            let core = read_tensor_file(dir.join("core.tnt"))?;
            let factors = (0..order)
                .map(|k| Matrix::try_from(read_tensor_file(dir.join(format!("factors{k}.tnt")))?))
                .collect::<Result<Vec<_>>>()?;
            Decomposition::Tucker(TuckerFactors::new(core, factors)?)
        }
        Method::Mps => {
            let cores = (0..order)
                .map(|k| read_tensor_file(dir.join(format!("core{k}.tnt"))))
                .collect::<Result<Vec<_>>>()?;
            Decomposition::Mps(MpsCores::new(cores)?)
        }
    };
    if d.full_shape() != meta.shape || d.ranks() != meta.ranks {
        return Err(Error::Format(format!(
            "bundle manifest says shape {:?} ranks {:?}, files give {:?} and {:?}",
            meta.shape,
            meta.ranks,
            d.full_shape(),
            d.ranks()
        )));
    }
    Ok((d, meta))
}
