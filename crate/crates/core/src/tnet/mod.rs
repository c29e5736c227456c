//! The network weight tensor: architecture, per-layer kernels, and the
//! dense and factorized convolutions that consume them.

mod arch;
mod conv;
pub mod perf;
mod weights;

pub use arch::{weight_tensor_shape, ArchConfig, Pathway};
pub use conv::{
    channel_mix, channel_mix_transposed, conv2d_backward_input, conv2d_backward_kernel, conv2d_reference,
    conv_flops, conv_output_size, factorized_conv2d, ConvFlops, FeatureMap,
};
pub use weights::{partial_core_contract, FactorizedConv, TNetWeights, WeightForm};
