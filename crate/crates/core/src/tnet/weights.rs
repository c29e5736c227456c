//! The network weight tensor in dense, Tucker or MPS form, and per-layer
//! kernel extraction.
//!
//! Layer `(i_0, i_1, i_2, i_3)` owns the kernel `W(i_0, i_1, i_2, i_3, :, :, :, :)`
//! with axes `(f_in, f_out, h, w)`. For the compressed forms the slice is
//! computed from the factors directly; the full 8th-order tensor is never
//! built.

use crate::decomp::{MpsCores, TuckerFactors};
use crate::error::{Error, Result};
use crate::tensor::{mode_n_product, DenseTensor, Matrix};

use super::arch::{weight_tensor_shape, ArchConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum WeightForm {
    Dense(DenseTensor),
    Tucker(TuckerFactors),
    Mps(MpsCores),
}

impl WeightForm {
    fn full_shape(&self) -> Vec<usize> {
        match self {
            WeightForm::Dense(t) => t.shape().to_vec(),
            WeightForm::Tucker(f) => f.full_shape(),
            WeightForm::Mps(c) => c.full_shape(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TNetWeights {
    form: WeightForm,
    arch: ArchConfig,
}

/// Tracks the number of scratch `f64`s alive at once.
#[derive(Debug, Default)]
struct ScratchMeter {
    live: usize,
    peak: usize,
}

impl ScratchMeter {
    fn alloc(&mut self, n: usize) {
        self.live += n;
        self.peak = self.peak.max(self.live);
    }

    fn free(&mut self, n: usize) {
        self.live -= n;
    }
}

fn check_layer(arch: &ArchConfig, idx: [usize; 4]) -> Result<()> {
    let dims = arch.dims();
    for k in 0..4 {
        if idx[k] >= dims[k] {
            return Err(Error::Index(format!(
                "layer index {idx:?}: {} >= extent {} on mode {k}",
                idx[k], dims[k]
            )));
        }
    }
    Ok(())
}

impl TNetWeights {
    pub fn new(form: WeightForm, arch: ArchConfig) -> Result<Self> {
        arch.validate()?;
        let expect = weight_tensor_shape(&arch).to_vec();
        if form.full_shape() != expect {
            return Err(Error::Shape(format!(
                "weights have shape {:?}, architecture needs {expect:?}",
                form.full_shape()
            )));
        }
        Ok(Self { form, arch })
    }

    pub fn form(&self) -> &WeightForm {
        &self.form
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    /// The `(f_in, f_out, h, w)` kernel of one layer.
    pub fn slice_kernel(&self, idx: [usize; 4]) -> Result<DenseTensor> {
        Ok(self.slice_kernel_metered(idx)?.0)
    }

    /// Like [`slice_kernel`](Self::slice_kernel), also returning the peak
    /// number of scratch `f64`s held at once (output included).
    pub fn slice_kernel_metered(&self, idx: [usize; 4]) -> Result<(DenseTensor, usize)> {
        check_layer(&self.arch, idx)?;
        match &self.form {
            WeightForm::Dense(t) => {
                let k = t.subtensor(&idx)?;
                let n = k.len();
                Ok((k, n))
            }
            WeightForm::Tucker(f) => {
                let mut meter = ScratchMeter::default();
                let fc = contract_layer(f, idx, &mut meter)?;
                let k = fc.kernel_metered(&mut meter);
                Ok((k, meter.peak))
            }
            WeightForm::Mps(c) => {
                let k = mps_slice(c, idx)?;
                let n = k.len();
                Ok((k, n))
            }
        }
    }
}

/// The three-convolution form of one Tucker layer.
///
/// `K(s, t, j, k) = sum_{a, b} C(a, b, j, k) * U_in(s, a) * U_out(t, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizedConv {
    /// `I_4 x R_4`.
    pub u_in: Matrix,
    /// `(R_4, R_5, I_6, I_7)`.
    pub partial_core: DenseTensor,
    /// `I_5 x R_5`.
    pub u_out: Matrix,
}

impl FactorizedConv {
    pub fn new(u_in: Matrix, partial_core: DenseTensor, u_out: Matrix) -> Result<Self> {
        let s = partial_core.shape();
        if s.len() != 4 || s[0] != u_in.cols() || s[1] != u_out.cols() {
            return Err(Error::Shape(format!(
                "partial core {s:?} does not match factors {}x{} and {}x{}",
                u_in.rows(),
                u_in.cols(),
                u_out.rows(),
                u_out.cols()
            )));
        }
        Ok(Self {
            u_in,
            partial_core,
            u_out,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.u_in.rows()
    }

    pub fn out_channels(&self) -> usize {
        self.u_out.rows()
    }

    pub fn ranks(&self) -> (usize, usize) {
        (self.u_in.cols(), self.u_out.cols())
    }

    pub fn kernel_size(&self) -> (usize, usize) {
        (self.partial_core.shape()[2], self.partial_core.shape()[3])
    }

    /// The dense `(f_in, f_out, h, w)` kernel this factorization encodes.
    pub fn kernel(&self) -> DenseTensor {
        self.kernel_metered(&mut ScratchMeter::default())
    }

    fn kernel_metered(&self, meter: &mut ScratchMeter) -> DenseTensor {
        let a = mode_n_product(&self.partial_core, &self.u_in, 0).expect("validated shapes");
        meter.alloc(a.len());
        let k = mode_n_product(&a, &self.u_out, 1).expect("validated shapes");
        meter.alloc(k.len());
        meter.free(a.len());
        k
    }
}

/// `C = G x_0 U0[i0] x_1 U1[i1] x_2 U2[i2] x_3 U3[i3] x_6 U6 x_7 U7`, paired
/// with the feature factors `U4`, `U5`.
pub fn partial_core_contract(f: &TuckerFactors, idx: [usize; 4]) -> Result<FactorizedConv> {
    contract_layer(f, idx, &mut ScratchMeter::default())
}

fn contract_layer(f: &TuckerFactors, idx: [usize; 4], meter: &mut ScratchMeter) -> Result<FactorizedConv> {
    if f.order() != 8 {
        return Err(Error::Shape(format!(
            "network weights are 8th order, got order {}",
            f.order()
        )));
    }
    let shape = f.full_shape();
    for k in 0..4 {
        if idx[k] >= shape[k] {
            return Err(Error::Index(format!(
                "layer index {idx:?}: {} >= extent {} on mode {k}",
                idx[k], shape[k]
            )));
        }
    }
    let ranks = f.ranks();
    let u = f.factors();
    let block: usize = ranks[4..].iter().product();
    let lead = [ranks[0], ranks[1], ranks[2], ranks[3]];
    let core = f.core().data();

    // Sum core blocks weighted by the selected factor rows, one leading
    // multi-index at a time.
    let mut acc = vec![0.0; block];
    meter.alloc(block);
    let mut r = [0usize; 4];
    for b in 0..lead.iter().product::<usize>() {
        let w = u[0].get(idx[0], r[0]) * u[1].get(idx[1], r[1]) * u[2].get(idx[2], r[2]) * u[3].get(idx[3], r[3]);
        if w != 0.0 {
            for (a, &g) in acc.iter_mut().zip(&core[b * block..(b + 1) * block]) {
                *a += w * g;
            }
        }
        crate::tensor::increment(&mut r, &lead);
    }
    let small = DenseTensor::new(ranks[4..].to_vec(), acc)?;
    let h = mode_n_product(&small, &u[6], 2)?;
    meter.alloc(h.len());
    meter.free(small.len());
    let c = mode_n_product(&h, &u[7], 3)?;
    meter.alloc(c.len());
    meter.free(h.len());
    FactorizedConv::new(u[4].clone(), c, u[5].clone())
}

fn mps_slice(c: &MpsCores, idx: [usize; 4]) -> Result<DenseTensor> {
    if c.order() != 8 {
        return Err(Error::Shape(format!(
            "network weights are 8th order, got order {}",
            c.order()
        )));
    }
    let mut v = vec![1.0];
    for (k, &i) in idx.iter().enumerate() {
        let core = &c.cores()[k];
        let (r0, n, r1) = (core.shape()[0], core.shape()[1], core.shape()[2]);
        if i >= n {
            return Err(Error::Index(format!("index {i} >= extent {n} on mode {k}")));
        }
        let d = core.data();
        v = (0..r1)
            .map(|b| {
                let mut acc = 0.0;
                for (a, &va) in v.iter().enumerate().take(r0) {
                    acc += va * d[(a * n + i) * r1 + b];
                }
                acc
            })
            .collect();
    }
    let shape = c.full_shape()[4..].to_vec();
    DenseTensor::new(shape, c.contract_from(&v, 4, 8))
}
