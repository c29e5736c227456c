use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::DEFAULT_OVERHEAD;
use crate::error::{Error, Result};

/// Architectural dimensions of the network weight tensor.
///
/// Mode order is fixed: `#hg, hg_depth, hg_subnet, b_depth, f_in, f_out,
/// h, w`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Number of stacked hourglasses.
    pub n_hg: usize,
    /// Recursion depth of each hourglass.
    pub hg_depth: usize,
    /// Pathways per hourglass level (encoder, decoder, skip).
    pub hg_subnet: usize,
    /// Convolutions per block.
    pub b_depth: usize,
    pub f_in: usize,
    pub f_out: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    /// Parameters that live outside the weight tensor (stem, heads,
    /// normalization).
    #[serde(default = "default_overhead")]
    pub overhead_params: u64,
}

fn default_overhead() -> u64 {
    DEFAULT_OVERHEAD
}

impl ArchConfig {
    pub fn new(dims: [usize; 8], overhead_params: u64) -> Result<Self> {
        let a = Self {
            n_hg: dims[0],
            hg_depth: dims[1],
            hg_subnet: dims[2],
            b_depth: dims[3],
            f_in: dims[4],
            f_out: dims[5],
            kernel_h: dims[6],
            kernel_w: dims[7],
            overhead_params,
        };
        a.validate()?;
        Ok(a)
    }

    /// 4 stacks of depth-4 hourglasses with 128 features and 3x3 kernels.
    pub fn full_scale() -> Self {
        Self::new([4, 4, 3, 2, 128, 128, 3, 3], DEFAULT_OVERHEAD).expect("valid")
    }

    /// A desk-scale network: 24 convolutions of 8 channels.
    pub fn toy() -> Self {
        Self::new([2, 2, 3, 2, 8, 8, 3, 3], 0).expect("valid")
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.dims().iter().position(|&d| d == 0) {
            return Err(Error::Shape(format!("architecture extent {k} is zero")));
        }
        Ok(())
    }

    pub fn dims(&self) -> [usize; 8] {
        [
            self.n_hg,
            self.hg_depth,
            self.hg_subnet,
            self.b_depth,
            self.f_in,
            self.f_out,
            self.kernel_h,
            self.kernel_w,
        ]
    }

    /// Number of tensorized convolutions, `I_0 I_1 I_2 I_3`.
    pub fn n_conv(&self) -> usize {
        self.n_hg * self.hg_depth * self.hg_subnet * self.b_depth
    }

    pub fn kernel_len(&self) -> usize {
        self.f_in * self.f_out * self.kernel_h * self.kernel_w
    }

    /// Every layer index `(i_0, i_1, i_2, i_3)` in row-major order.
    pub fn layer_indices(&self) -> impl Iterator<Item = [usize; 4]> + '_ {
        let d = self.dims();
        (0..self.n_conv()).map(move |mut flat| {
            let mut idx = [0; 4];
            for k in (0..4).rev() {
                idx[k] = flat % d[k];
                flat /= d[k];
            }
            idx
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let a: Self = serde_json::from_str(text)?;
        a.validate()?;
        Ok(a)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain struct serializes")
    }
}

/// Shape `(I_0, ..., I_7)` of the network weight tensor.
pub fn weight_tensor_shape(arch: &ArchConfig) -> [usize; 8] {
    arch.dims()
}

/// Role of an index along the `hg_subnet` mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pathway {
    Encoder,
    Decoder,
    Skip,
}

impl Pathway {
    pub const ALL: [Pathway; 3] = [Pathway::Encoder, Pathway::Decoder, Pathway::Skip];

    pub fn index(self) -> usize {
        match self {
            Pathway::Encoder => 0,
            Pathway::Decoder => 1,
            Pathway::Skip => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}
