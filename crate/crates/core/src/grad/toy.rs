//! A desk-scale stacked hourglass trained on synthetic heatmaps, with every
//! tensorized convolution sliced from one Tucker-parametrized weight tensor.
//!
//! Network layout, for `n_hg` stacks of depth `hg_depth`:
//!
//! ```text
//! x0      = stem(input)                        1x1 conv + bias, untensorized
//! h_s     = hourglass_s(x_s, level 0)
//! pred_s  = head_s(h_s)                        1x1 conv + bias, untensorized
//! x_{s+1} = x_s + h_s
//!
//! hourglass(x, d) = skip_d(x) + up(dec_d(inner(enc_d(pool(x)))))
//! inner           = hourglass(., d + 1) below the last level, identity there
//! block(x)        = x + (conv -> BatchNorm -> ReLU) repeated b_depth times
//! ```
//!
//! Pathway indices along `hg_subnet` are 0 = encoder, 1 = decoder, 2 = skip.
//! BatchNorm uses batch statistics; its scale and shift are untensorized.
//! The loss is the heatmap MSE averaged over stacks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::decomp::{hosvd, TuckerFactors};
use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Matrix};
use crate::tnet::{
    channel_mix, channel_mix_transposed, conv2d_backward_input, conv2d_backward_kernel, conv2d_reference,
    factorized_conv2d, partial_core_contract, weight_tensor_shape, ArchConfig, FactorizedConv, FeatureMap, Pathway,
};

use super::fd::WeightLoss;
use super::optim::{OptimizerState, RmsProp};
use super::project::project_gradients;

const BN_EPS: f64 = 1e-5;

type Batch = Vec<FeatureMap>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyTaskConfig {
    pub seed: u64,
    pub samples: usize,
    pub size: usize,
    pub keypoints: usize,
    /// Target heatmap width in pixels.
    pub sigma: f64,
    /// Width of the input blobs marking each keypoint.
    pub input_sigma: f64,
    pub noise: f64,
}

impl Default for ToyTaskConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            samples: 8,
            size: 16,
            keypoints: 2,
            sigma: 1.5,
            input_sigma: 2.5,
            noise: 0.05,
        }
    }
}

/// Synthetic keypoint-heatmap regression.
///
/// Input channel `k < keypoints` holds a blurred blob at keypoint `k` plus
/// noise; the last channel is pure noise. Target channel `k` is a Gaussian
/// bump of width `sigma` at keypoint `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyTask {
    pub seed: u64,
    pub inputs: Vec<FeatureMap>,
    pub targets: Vec<FeatureMap>,
}

fn gaussian(y: usize, x: usize, cy: f64, cx: f64, sigma: f64) -> f64 {
    let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
    (-d2 / (2.0 * sigma * sigma)).exp()
}

impl ToyTask {
    pub fn generate(cfg: &ToyTaskConfig) -> Result<Self> {
        if cfg.samples == 0 || cfg.keypoints == 0 || cfg.size < 4 {
            return Err(Error::Shape(format!("degenerate toy task {cfg:?}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Shape(e.to_string()))?;
        let (s, k) = (cfg.size, cfg.keypoints);
        let lo = 2.0;
        let hi = s as f64 - 3.0;
        let mut inputs = Vec::with_capacity(cfg.samples);
        let mut targets = Vec::with_capacity(cfg.samples);
        for _ in 0..cfg.samples {
            let points: Vec<(f64, f64)> = (0..k)
                .map(|_| (rng.random_range(lo..hi), rng.random_range(lo..hi)))
                .collect();
            let input = FeatureMap::from_fn(k + 1, s, s, |c, y, x| {
                let blob = points
                    .get(c)
                    .map_or(0.0, |&(cy, cx)| gaussian(y, x, cy, cx, cfg.input_sigma));
                blob + noise.sample(&mut rng)
            })?;
            let target = FeatureMap::from_fn(k, s, s, |c, y, x| {
                let (cy, cx) = points[c];
                gaussian(y, x, cy, cx, cfg.sigma)
            })?;
            inputs.push(input);
            targets.push(target);
        }
        Ok(Self {
            seed: cfg.seed,
            inputs,
            targets,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.inputs[0].channels()
    }

    pub fn keypoints(&self) -> usize {
        self.targets[0].channels()
    }

    pub fn size(&self) -> usize {
        self.inputs[0].height()
    }
}

/// Parameters outside the weight tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxParams {
    pub stem_w: Matrix,
    pub stem_b: Vec<f64>,
    /// BatchNorm scale, one vector per tensorized convolution.
    pub gamma: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub head_w: Vec<Matrix>,
    pub head_b: Vec<Vec<f64>>,
}

impl AuxParams {
    pub fn init<R: Rng>(arch: &ArchConfig, in_channels: usize, keypoints: usize, rng: &mut R) -> Result<Self> {
        let f = arch.f_out;
        let stem = Normal::new(0.0, (1.0 / in_channels as f64).sqrt()).expect("positive std");
        Ok(Self {
            stem_w: Matrix::from_fn(arch.f_in, in_channels, |_, _| stem.sample(rng))?,
            stem_b: vec![0.0; arch.f_in],
            gamma: vec![vec![1.0; f]; arch.n_conv()],
            beta: vec![vec![0.0; f]; arch.n_conv()],
            // Zero heads start every prediction at zero, so the initial loss
            // is the target energy rather than noise from the random trunk.
            head_w: vec![Matrix::zeros(keypoints, f); arch.n_hg],
            head_b: vec![vec![0.0; keypoints]; arch.n_hg],
        })
    }

    fn zeros_like(&self) -> Self {
        let z = |v: &Vec<f64>| vec![0.0; v.len()];
        Self {
            stem_w: Matrix::zeros(self.stem_w.rows(), self.stem_w.cols()),
            stem_b: z(&self.stem_b),
            gamma: self.gamma.iter().map(z).collect(),
            beta: self.beta.iter().map(z).collect(),
            head_w: self.head_w.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
            head_b: self.head_b.iter().map(z).collect(),
        }
    }

    /// Every parameter array, in a fixed order.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = vec![self.stem_w.data(), &self.stem_b];
        v.extend(self.gamma.iter().map(Vec::as_slice));
        v.extend(self.beta.iter().map(Vec::as_slice));
        v.extend(self.head_w.iter().map(Matrix::data));
        v.extend(self.head_b.iter().map(Vec::as_slice));
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = vec![self.stem_w.data_mut(), &mut self.stem_b];
        v.extend(self.gamma.iter_mut().map(Vec::as_mut_slice));
        v.extend(self.beta.iter_mut().map(Vec::as_mut_slice));
        v.extend(self.head_w.iter_mut().map(Matrix::data_mut));
        v.extend(self.head_b.iter_mut().map(Vec::as_mut_slice));
        v
    }

    pub fn count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }
}

/// Per-layer kernel, with the factorized form used for the forward pass
/// when available.
struct LayerKernel {
    kernel: DenseTensor,
    factorized: Option<FactorizedConv>,
}

/// Weights in the form the forward pass consumes.
pub enum NetWeights<'a> {
    /// Forward through the three-stage factorized convolutions.
    Tucker(&'a TuckerFactors),
    /// Forward through dense reference convolutions.
    Dense(&'a DenseTensor),
}

pub struct LossAndGrad {
    pub loss: f64,
    /// `dL/dW` over the full weight tensor.
    pub d_w: DenseTensor,
    pub d_aux: AuxParams,
}

struct ConvCache {
    input: Batch,
    xhat: Batch,
    active: Vec<Vec<bool>>,
    inv_std: Vec<f64>,
}

struct HgCache {
    skip: Vec<ConvCache>,
    enc: Vec<ConvCache>,
    inner: Option<Box<HgCache>>,
    dec: Vec<ConvCache>,
}

struct ForwardCache {
    stem_in: Batch,
    hg: Vec<HgCache>,
    hg_out: Vec<Batch>,
    dpred: Vec<Batch>,
}

fn add_batches(a: &mut Batch, b: &Batch) {
    for (x, y) in a.iter_mut().zip(b) {
        x.add_assign(y).expect("matching shapes");
    }
}

fn avg_pool2(x: &FeatureMap) -> FeatureMap {
    let (c, h, w) = (x.channels(), x.height() / 2, x.width() / 2);
    let mut out = FeatureMap::zeros(c, h, w);
    let (iw, d) = (x.width(), x.data());
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let base = (ch * x.height() + 2 * y) * iw + 2 * xx;
                out.data_mut()[(ch * h + y) * w + xx] =
                    0.25 * (d[base] + d[base + 1] + d[base + iw] + d[base + iw + 1]);
            }
        }
    }
    out
}

fn avg_pool2_backward(g: &FeatureMap) -> FeatureMap {
    let (c, h, w) = (g.channels(), g.height(), g.width());
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = FeatureMap::zeros(c, oh, ow);
    for ch in 0..c {
        for y in 0..oh {
            for x in 0..ow {
                out.data_mut()[(ch * oh + y) * ow + x] = 0.25 * g.get(ch, y / 2, x / 2);
            }
        }
    }
    out
}

fn upsample2(x: &FeatureMap) -> FeatureMap {
    let (c, h, w) = (x.channels(), 2 * x.height(), 2 * x.width());
    let mut out = FeatureMap::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out.data_mut()[(ch * h + y) * w + xx] = x.get(ch, y / 2, xx / 2);
            }
        }
    }
    out
}

fn upsample2_backward(g: &FeatureMap) -> FeatureMap {
    let (c, h, w) = (g.channels(), g.height() / 2, g.width() / 2);
    let mut out = FeatureMap::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..g.height() {
            for x in 0..g.width() {
                out.data_mut()[(ch * h + y / 2) * w + x / 2] += g.get(ch, y, x);
            }
        }
    }
    out
}

fn add_bias(x: &mut FeatureMap, b: &[f64]) {
    let p = x.plane();
    for (c, &bc) in b.iter().enumerate() {
        x.data_mut()[c * p..(c + 1) * p].iter_mut().for_each(|v| *v += bc);
    }
}

/// `dM[t, s] += sum_p g[t, p] x[s, p]` and `db[t] += sum_p g[t, p]`.
fn mix_backward(x: &FeatureMap, g: &FeatureMap, dm: &mut Matrix, db: &mut [f64]) {
    let p = x.plane();
    for t in 0..g.channels() {
        let gt = &g.data()[t * p..(t + 1) * p];
        db[t] += gt.iter().sum::<f64>();
        for s in 0..x.channels() {
            let xs = &x.data()[s * p..(s + 1) * p];
            let v = dm.get(t, s) + gt.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
            dm.set(t, s, v);
        }
    }
}

/// The toy network's shape and its forward/backward passes.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyNetwork {
    arch: ArchConfig,
    in_channels: usize,
    keypoints: usize,
    size: usize,
}

impl ToyNetwork {
    pub fn new(arch: &ArchConfig, task: &ToyTask) -> Result<Self> {
        arch.validate()?;
        if arch.hg_subnet != 3 {
            return Err(Error::Shape(format!(
                "the toy hourglass needs exactly 3 pathways, got {}",
                arch.hg_subnet
            )));
        }
        if arch.f_in != arch.f_out {
            return Err(Error::Shape("residual blocks need f_in == f_out".into()));
        }
        if arch.kernel_h.is_multiple_of(2) || arch.kernel_w.is_multiple_of(2) {
            return Err(Error::Shape("kernels must have odd extents".into()));
        }
        let size = task.size();
        if !size.is_multiple_of(1 << arch.hg_depth) {
            return Err(Error::Shape(format!(
                "input size {size} is not divisible by 2^{}",
                arch.hg_depth
            )));
        }
        Ok(Self {
            arch: *arch,
            in_channels: task.in_channels(),
            keypoints: task.keypoints(),
            size,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn init_aux<R: Rng>(&self, rng: &mut R) -> Result<AuxParams> {
        AuxParams::init(&self.arch, self.in_channels, self.keypoints, rng)
    }

    fn layer(&self, stack: usize, depth: usize, path: Pathway, conv: usize) -> usize {
        let a = &self.arch;
        ((stack * a.hg_depth + depth) * a.hg_subnet + path.index()) * a.b_depth + conv
    }

    fn kernels(&self, w: &NetWeights<'_>) -> Result<Vec<LayerKernel>> {
        let expect = weight_tensor_shape(&self.arch).to_vec();
        match w {
            NetWeights::Tucker(f) => {
                if f.full_shape() != expect {
                    return Err(Error::Shape("Tucker weights do not match the architecture".into()));
                }
                self.arch
                    .layer_indices()
                    .map(|idx| {
                        let fc = partial_core_contract(f, idx)?;
                        Ok(LayerKernel {
                            kernel: fc.kernel(),
                            factorized: Some(fc),
                        })
                    })
                    .collect()
            }
            NetWeights::Dense(t) => {
                if t.shape() != expect.as_slice() {
                    return Err(Error::Shape("dense weights do not match the architecture".into()));
                }
                self.arch
                    .layer_indices()
                    .map(|idx| {
                        Ok(LayerKernel {
                            kernel: t.subtensor(&idx)?,
                            factorized: None,
                        })
                    })
                    .collect()
            }
        }
    }

    fn conv_bn_relu(&self, x: Batch, layer: usize, kernels: &[LayerKernel], aux: &AuxParams) -> Result<(Batch, ConvCache)> {
        let lk = &kernels[layer];
        let pad = self.arch.kernel_h / 2;
        let mut ys = x
            .iter()
            .map(|xi| match &lk.factorized {
                Some(fc) => factorized_conv2d(xi, fc, 1, pad),
                None => conv2d_reference(xi, &lk.kernel, 1, pad),
            })
            .collect::<Result<Batch>>()?;
        let (gamma, beta) = (&aux.gamma[layer], &aux.beta[layer]);
        let c = ys[0].channels();
        let p = ys[0].plane();
        let m = (ys.len() * p) as f64;
        let mut inv_std = vec![0.0; c];
        let mut active = vec![vec![false; c * p]; ys.len()];
        let mut outs = Vec::with_capacity(ys.len());
        for ch in 0..c {
            let vals = || ys.iter().flat_map(|y| y.data()[ch * p..(ch + 1) * p].iter());
            let mean = vals().sum::<f64>() / m;
            let var = vals().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            inv_std[ch] = 1.0 / (var + BN_EPS).sqrt();
            for y in ys.iter_mut() {
                y.data_mut()[ch * p..(ch + 1) * p]
                    .iter_mut()
                    .for_each(|v| *v = (*v - mean) * inv_std[ch]);
            }
        }
        for (n, xhat) in ys.iter().enumerate() {
            let mut out = xhat.clone();
            for ch in 0..c {
                for i in ch * p..(ch + 1) * p {
                    let z = gamma[ch] * xhat.data()[i] + beta[ch];
                    active[n][i] = z > 0.0;
                    out.data_mut()[i] = z.max(0.0);
                }
            }
            outs.push(out);
        }
        Ok((
            outs,
            ConvCache {
                input: x,
                xhat: ys,
                active,
                inv_std,
            },
        ))
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_bn_relu_backward(
        &self,
        cache: &ConvCache,
        dout: &Batch,
        layer: usize,
        kernels: &[LayerKernel],
        aux: &AuxParams,
        d_kernels: &mut [DenseTensor],
        d_aux: &mut AuxParams,
    ) -> Result<Batch> {
        let gamma = &aux.gamma[layer];
        let c = dout[0].channels();
        let p = dout[0].plane();
        let m = (dout.len() * p) as f64;
        // dz, then dxhat in place.
        let mut dy: Batch = dout
            .iter()
            .zip(&cache.active)
            .map(|(g, act)| {
                let mut d = g.clone();
                d.data_mut().iter_mut().zip(act).for_each(|(v, &a)| {
                    if !a {
                        *v = 0.0;
                    }
                });
                d
            })
            .collect();
        for ch in 0..c {
            let mut sum_dz = 0.0;
            let mut sum_dz_xhat = 0.0;
            for (d, xh) in dy.iter().zip(&cache.xhat) {
                for i in ch * p..(ch + 1) * p {
                    sum_dz += d.data()[i];
                    sum_dz_xhat += d.data()[i] * xh.data()[i];
                }
            }
            d_aux.gamma[layer][ch] += sum_dz_xhat;
            d_aux.beta[layer][ch] += sum_dz;
            let mean_dxhat = gamma[ch] * sum_dz / m;
            let mean_dxhat_xhat = gamma[ch] * sum_dz_xhat / m;
            for (d, xh) in dy.iter_mut().zip(&cache.xhat) {
                for i in ch * p..(ch + 1) * p {
                    let dxhat = gamma[ch] * d.data()[i];
                    d.data_mut()[i] = cache.inv_std[ch] * (dxhat - mean_dxhat - xh.data()[i] * mean_dxhat_xhat);
                }
            }
        }
        let kernel = &kernels[layer].kernel;
        let shape = [kernel.shape()[0], kernel.shape()[1], kernel.shape()[2], kernel.shape()[3]];
        let pad = shape[2] / 2;
        let mut dx = Vec::with_capacity(dy.len());
        for (x, g) in cache.input.iter().zip(&dy) {
            d_kernels[layer].axpy(1.0, &conv2d_backward_kernel(x, g, shape, 1, pad)?)?;
            dx.push(conv2d_backward_input(g, kernel, x.height(), x.width(), 1, pad)?);
        }
        Ok(dx)
    }

    fn block(&self, x: &Batch, stack: usize, depth: usize, path: Pathway, kernels: &[LayerKernel], aux: &AuxParams) -> Result<(Batch, Vec<ConvCache>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.arch.b_depth);
        for c in 0..self.arch.b_depth {
            let (out, cache) = self.conv_bn_relu(h, self.layer(stack, depth, path, c), kernels, aux)?;
            h = out;
            caches.push(cache);
        }
        add_batches(&mut h, x);
        Ok((h, caches))
    }

    #[allow(clippy::too_many_arguments)]
    fn block_backward(
        &self,
        caches: &[ConvCache],
        dout: &Batch,
        stack: usize,
        depth: usize,
        path: Pathway,
        kernels: &[LayerKernel],
        aux: &AuxParams,
        d_kernels: &mut [DenseTensor],
        d_aux: &mut AuxParams,
    ) -> Result<Batch> {
        let mut g = dout.clone();
        for c in (0..self.arch.b_depth).rev() {
            let layer = self.layer(stack, depth, path, c);
            g = self.conv_bn_relu_backward(&caches[c], &g, layer, kernels, aux, d_kernels, d_aux)?;
        }
        add_batches(&mut g, dout);
        Ok(g)
    }

    fn hourglass(&self, x: &Batch, stack: usize, depth: usize, kernels: &[LayerKernel], aux: &AuxParams) -> Result<(Batch, HgCache)> {
        let (mut up1, skip) = self.block(x, stack, depth, Pathway::Skip, kernels, aux)?;
        let pooled: Batch = x.iter().map(avg_pool2).collect();
        let (low, enc) = self.block(&pooled, stack, depth, Pathway::Encoder, kernels, aux)?;
        let (low, inner) = if depth + 1 < self.arch.hg_depth {
            let (o, c) = self.hourglass(&low, stack, depth + 1, kernels, aux)?;
            (o, Some(Box::new(c)))
        } else {
            (low, None)
        };
        let (low, dec) = self.block(&low, stack, depth, Pathway::Decoder, kernels, aux)?;
        let up2: Batch = low.iter().map(upsample2).collect();
        add_batches(&mut up1, &up2);
        Ok((up1, HgCache { skip, enc, inner, dec }))
    }

    #[allow(clippy::too_many_arguments)]
    fn hourglass_backward(
        &self,
        cache: &HgCache,
        dout: &Batch,
        stack: usize,
        depth: usize,
        kernels: &[LayerKernel],
        aux: &AuxParams,
        d_kernels: &mut [DenseTensor],
        d_aux: &mut AuxParams,
    ) -> Result<Batch> {
        let mut dx = self.block_backward(&cache.skip, dout, stack, depth, Pathway::Skip, kernels, aux, d_kernels, d_aux)?;
        let d_low: Batch = dout.iter().map(upsample2_backward).collect();
        let mut g = self.block_backward(&cache.dec, &d_low, stack, depth, Pathway::Decoder, kernels, aux, d_kernels, d_aux)?;
        if let Some(inner) = &cache.inner {
            g = self.hourglass_backward(inner, &g, stack, depth + 1, kernels, aux, d_kernels, d_aux)?;
        }
        let g = self.block_backward(&cache.enc, &g, stack, depth, Pathway::Encoder, kernels, aux, d_kernels, d_aux)?;
        let d_pool: Batch = g.iter().map(avg_pool2_backward).collect();
        add_batches(&mut dx, &d_pool);
        Ok(dx)
    }

    fn forward(&self, kernels: &[LayerKernel], aux: &AuxParams, task: &ToyTask) -> Result<(f64, ForwardCache)> {
        let n_stacks = self.arch.n_hg;
        let mut x: Batch = task
            .inputs
            .iter()
            .map(|inp| {
                let mut h = channel_mix(inp, &aux.stem_w)?;
                add_bias(&mut h, &aux.stem_b);
                Ok(h)
            })
            .collect::<Result<_>>()?;
        let norm = 1.0 / (n_stacks * task.inputs.len() * self.keypoints * self.size * self.size) as f64;
        let mut loss = 0.0;
        let mut hg = Vec::with_capacity(n_stacks);
        let mut hg_out = Vec::with_capacity(n_stacks);
        let mut dpred = Vec::with_capacity(n_stacks);
        for s in 0..n_stacks {
            let (h, cache) = self.hourglass(&x, s, 0, kernels, aux)?;
            let mut dp = Vec::with_capacity(h.len());
            for (hi, target) in h.iter().zip(&task.targets) {
                let mut pred = channel_mix(hi, &aux.head_w[s])?;
                add_bias(&mut pred, &aux.head_b[s]);
                for (v, &t) in pred.data_mut().iter_mut().zip(target.data()) {
                    let r = *v - t;
                    loss += norm * r * r;
                    *v = 2.0 * norm * r;
                }
                dp.push(pred);
            }
            if s + 1 < n_stacks {
                add_batches(&mut x, &h);
            }
            hg.push(cache);
            hg_out.push(h);
            dpred.push(dp);
        }
        Ok((
            loss,
            ForwardCache {
                stem_in: task.inputs.clone(),
                hg,
                hg_out,
                dpred,
            },
        ))
    }

    fn backward(&self, cache: &ForwardCache, kernels: &[LayerKernel], aux: &AuxParams) -> Result<(DenseTensor, AuxParams)> {
        let mut d_aux = aux.zeros_like();
        let mut d_kernels: Vec<DenseTensor> = kernels
            .iter()
            .map(|k| DenseTensor::zeros(k.kernel.shape()))
            .collect::<Result<_>>()?;
        let n_stacks = self.arch.n_hg;
        let mut g_next: Option<Batch> = None;
        for s in (0..n_stacks).rev() {
            let mut dh: Batch = Vec::with_capacity(cache.hg_out[s].len());
            for (h, dp) in cache.hg_out[s].iter().zip(&cache.dpred[s]) {
                mix_backward(h, dp, &mut d_aux.head_w[s], &mut d_aux.head_b[s]);
                dh.push(channel_mix_transposed(dp, &aux.head_w[s])?);
            }
            if let Some(g) = &g_next {
                add_batches(&mut dh, g);
            }
            let mut dx = self.hourglass_backward(&cache.hg[s], &dh, s, 0, kernels, aux, &mut d_kernels, &mut d_aux)?;
            if let Some(g) = &g_next {
                add_batches(&mut dx, g);
            }
            g_next = Some(dx);
        }
        let g = g_next.expect("at least one stack");
        for (inp, gi) in cache.stem_in.iter().zip(&g) {
            mix_backward(inp, gi, &mut d_aux.stem_w, &mut d_aux.stem_b);
        }
        let shape = weight_tensor_shape(&self.arch);
        let mut d_w = Vec::with_capacity(shape.iter().product());
        for dk in d_kernels {
            d_w.extend_from_slice(dk.data());
        }
        Ok((DenseTensor::new(shape.to_vec(), d_w)?, d_aux))
    }

    pub fn loss(&self, w: NetWeights<'_>, aux: &AuxParams, task: &ToyTask) -> Result<f64> {
        let kernels = self.kernels(&w)?;
        Ok(self.forward(&kernels, aux, task)?.0)
    }

    pub fn loss_and_grad(&self, w: NetWeights<'_>, aux: &AuxParams, task: &ToyTask) -> Result<LossAndGrad> {
        let kernels = self.kernels(&w)?;
        let (loss, cache) = self.forward(&kernels, aux, task)?;
        let (d_w, d_aux) = self.backward(&cache, &kernels, aux)?;
        Ok(LossAndGrad { loss, d_w, d_aux })
    }
}

/// The network loss as a function of the dense weight tensor, other
/// parameters held fixed.
pub struct NetworkLoss<'a> {
    pub net: &'a ToyNetwork,
    pub aux: &'a AuxParams,
    pub task: &'a ToyTask,
}

impl WeightLoss for NetworkLoss<'_> {
    fn value(&self, w: &DenseTensor) -> Result<f64> {
        self.net.loss(NetWeights::Dense(w), self.aux, self.task)
    }

    fn gradient(&self, w: &DenseTensor) -> Result<DenseTensor> {
        Ok(self.net.loss_and_grad(NetWeights::Dense(w), self.aux, self.task)?.d_w)
    }
}

/// Dense Kaiming-normal weights, `std = sqrt(2 / (f_in h w))`.
pub fn kaiming_weights<R: Rng>(arch: &ArchConfig, rng: &mut R) -> Result<DenseTensor> {
    let fan_in = (arch.f_in * arch.kernel_h * arch.kernel_w) as f64;
    let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
    DenseTensor::from_fn(&weight_tensor_shape(arch), |_| dist.sample(rng))
}

/// Initial Tucker weights and auxiliary parameters for a task: HOSVD of a
/// dense Kaiming draw, truncated to `ranks`.
pub fn init_toy(net: &ToyNetwork, ranks: &[usize], seed: u64) -> Result<(TuckerFactors, AuxParams)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let dense = kaiming_weights(net.arch(), &mut rng)?;
    let factors = hosvd(&dense, ranks)?;
    let aux = net.init_aux(&mut rng)?;
    Ok((factors, aux))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Loss before each update.
    pub losses: Vec<f64>,
    pub factors: TuckerFactors,
    pub aux: AuxParams,
}

/// Trains the Tucker-parametrized toy network with RMSprop on the full
/// task batch.
pub fn train_toy(arch: &ArchConfig, ranks: &[usize], task: &ToyTask, steps: usize, opt: RmsProp) -> Result<TrainOutcome> {
    train_toy_observed(arch, ranks, task, steps, opt, |_, _, _, _| Ok(()))
}

/// [`train_toy`] with a callback seeing the parameters and loss before
/// every update.
pub fn train_toy_observed(
    arch: &ArchConfig,
    ranks: &[usize],
    task: &ToyTask,
    steps: usize,
    opt: RmsProp,
    mut observe: impl FnMut(usize, &TuckerFactors, &AuxParams, f64) -> Result<()>,
) -> Result<TrainOutcome> {
    let net = ToyNetwork::new(arch, task)?;
    let (mut factors, mut aux) = init_toy(&net, ranks, task.seed)?;
    let mut state = OptimizerState::new(opt);
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let LossAndGrad { loss, d_w, d_aux } = net.loss_and_grad(NetWeights::Tucker(&factors), &aux, task)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        losses.push(loss);
        observe(step, &factors, &aux, loss)?;
        let g = project_gradients(&factors, &d_w)?;
        state.step(0, factors.core_mut().data_mut(), g.d_core.data())?;
        for (k, dg) in g.d_factors.iter().enumerate() {
            state.step(1 + k, factors.factors_mut()[k].data_mut(), dg.data())?;
        }
        let base = 1 + g.d_factors.len();
        for (i, (p, dg)) in aux.slices_mut().into_iter().zip(d_aux.slices()).enumerate() {
            state.step(base + i, p, dg)?;
        }
        if factors.core().data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step, loss: f64::NAN });
        }
    }
    Ok(TrainOutcome { losses, factors, aux })
}
