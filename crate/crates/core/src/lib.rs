//! Whole-network weight tensors for stacked hourglass networks.
//!
//! All convolution kernels of a fully convolutional network are slices of
//! one 8th-order tensor `W[hg, depth, subnet, block, f_in, f_out, h, w]`.
//! This crate provides the tensor algebra, Tucker and MPS decompositions of
//! that tensor, factorized convolutions built from the decomposition,
//! parameter accounting, and a small trainer exercising gradients through
//! the factors.

pub mod analysis;
pub mod decomp;
pub mod error;
pub mod grad;
pub mod tensor;
pub mod tnet;

pub use decomp::{Decomposition, MpsCores, TuckerFactors};
pub use error::{Error, Result};
pub use tensor::{DenseTensor, Matrix};
pub use tnet::{ArchConfig, FactorizedConv, FeatureMap};
