//! 2-D cross-correlation with zero padding, dense and factorized.
//!
//! Kernels use the `(f_in, f_out, h, w)` axis order of the weight tensor.

use crate::error::{Error, Result};
use crate::tensor::{check_finite, DenseTensor, Matrix};

use super::weights::FactorizedConv;

/// A `channels x height x width` activation map, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "degenerate feature map {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{channels}x{height}x{width} feature map needs {} entries, got {}",
                channels * height * width,
                data.len()
            )));
        }
        check_finite(&data, "feature map")?;
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &FeatureMap) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    pub fn add_assign(&mut self, other: &FeatureMap) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("adding feature maps of different shape".into()));
        }
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `floor((n + 2 pad - k) / stride) + 1`.
pub fn conv_output_size(n: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Shape("stride must be positive".into()));
    }
    if n + 2 * pad < k {
        return Err(Error::Shape(format!(
            "kernel {k} larger than padded input {}",
            n + 2 * pad
        )));
    }
    Ok((n + 2 * pad - k) / stride + 1)
}

/// Output positions `o` with `0 <= o * stride + tap - pad < n`.
#[inline]
fn valid_range(out: usize, n: usize, tap: usize, stride: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > tap { (pad - tap).div_ceil(stride) } else { 0 };
    let hi = ((n + pad).saturating_sub(tap)).div_ceil(stride).min(out);
    (lo, hi.max(lo))
}

fn kernel_dims(k: &DenseTensor) -> Result<(usize, usize, usize, usize)> {
    match *k.shape() {
        [ci, co, kh, kw] => Ok((ci, co, kh, kw)),
        ref s => Err(Error::Shape(format!("kernel must be 4th order, got {s:?}"))),
    }
}

/// Direct cross-correlation: `out[t, y, x] = sum_{s, j, k} K[s, t, j, k] *
/// in[s, y*stride + j - pad, x*stride + k - pad]`.
pub fn conv2d_reference(x: &FeatureMap, kernel: &DenseTensor, stride: usize, pad: usize) -> Result<FeatureMap> {
    let (ci, co, kh, kw) = kernel_dims(kernel)?;
    if ci != x.channels {
        return Err(Error::Shape(format!(
            "kernel expects {ci} input channels, feature map has {}",
            x.channels
        )));
    }
    let oh = conv_output_size(x.height, kh, stride, pad)?;
    let ow = conv_output_size(x.width, kw, stride, pad)?;
    let mut out = FeatureMap::zeros(co, oh, ow);
    let kd = kernel.data();
    let (h, w) = (x.height, x.width);
    for t in 0..co {
        let dst = &mut out.data[t * oh * ow..(t + 1) * oh * ow];
        for s in 0..ci {
            let src = &x.data[s * h * w..(s + 1) * h * w];
            for j in 0..kh {
                let (y0, y1) = valid_range(oh, h, j, stride, pad);
                for k in 0..kw {
                    let wt = kd[((s * co + t) * kh + j) * kw + k];
                    if wt == 0.0 {
                        continue;
                    }
                    let (x0, x1) = valid_range(ow, w, k, stride, pad);
                    for oy in y0..y1 {
                        let iy = oy * stride + j - pad;
                        let row = &src[iy * w..(iy + 1) * w];
                        let orow = &mut dst[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            let ix0 = x0 + k - pad;
                            for (o, &v) in orow[x0..x1].iter_mut().zip(&row[ix0..ix0 + (x1 - x0)]) {
                                *o += wt * v;
                            }
                        } else {
                            for ox in x0..x1 {
                                orow[ox] += wt * row[ox * stride + k - pad];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Channel mixing `out[t] = sum_s m[t, s] * in[s]` (a 1x1 convolution).
pub fn channel_mix(x: &FeatureMap, m: &Matrix) -> Result<FeatureMap> {
    if m.cols() != x.channels {
        return Err(Error::Shape(format!(
            "{}x{} channel map applied to {} channels",
            m.rows(),
            m.cols(),
            x.channels
        )));
    }
    let p = x.plane();
    let mut out = FeatureMap::zeros(m.rows(), x.height, x.width);
    for t in 0..m.rows() {
        let dst = &mut out.data[t * p..(t + 1) * p];
        for (s, &wt) in m.row(t).iter().enumerate() {
            if wt == 0.0 {
                continue;
            }
            for (o, &v) in dst.iter_mut().zip(&x.data[s * p..(s + 1) * p]) {
                *o += wt * v;
            }
        }
    }
    Ok(out)
}

/// Channel mixing by the transpose: `out[r] = sum_s m[s, r] * in[s]`.
pub fn channel_mix_transposed(x: &FeatureMap, m: &Matrix) -> Result<FeatureMap> {
    if m.rows() != x.channels {
        return Err(Error::Shape(format!(
            "({}x{})^T channel map applied to {} channels",
            m.rows(),
            m.cols(),
            x.channels
        )));
    }
    let p = x.plane();
    let mut out = FeatureMap::zeros(m.cols(), x.height, x.width);
    for s in 0..m.rows() {
        let src = &x.data[s * p..(s + 1) * p];
        for (r, &wt) in m.row(s).iter().enumerate() {
            if wt == 0.0 {
                continue;
            }
            for (o, &v) in out.data[r * p..(r + 1) * p].iter_mut().zip(src) {
                *o += wt * v;
            }
        }
    }
    Ok(out)
}

/// Three-stage convolution: `U_in^T` (1x1), the partial core (spatial,
/// carries stride and padding), then `U_out` (1x1).
pub fn factorized_conv2d(x: &FeatureMap, fc: &FactorizedConv, stride: usize, pad: usize) -> Result<FeatureMap> {
    if x.channels != fc.in_channels() {
        return Err(Error::Shape(format!(
            "factorized conv expects {} input channels, feature map has {}",
            fc.in_channels(),
            x.channels
        )));
    }
    let reduced = channel_mix_transposed(x, &fc.u_in)?;
    let spatial = conv2d_reference(&reduced, &fc.partial_core, stride, pad)?;
    channel_mix(&spatial, &fc.u_out)
}

/// Gradient of a convolution with respect to its input.
pub fn conv2d_backward_input(
    grad_out: &FeatureMap,
    kernel: &DenseTensor,
    in_height: usize,
    in_width: usize,
    stride: usize,
    pad: usize,
) -> Result<FeatureMap> {
    let (ci, co, kh, kw) = kernel_dims(kernel)?;
    let (oh, ow) = (grad_out.height, grad_out.width);
    if grad_out.channels != co
        || conv_output_size(in_height, kh, stride, pad)? != oh
        || conv_output_size(in_width, kw, stride, pad)? != ow
    {
        return Err(Error::Shape("output gradient does not match the convolution".into()));
    }
    let (h, w) = (in_height, in_width);
    let mut gin = FeatureMap::zeros(ci, h, w);
    let kd = kernel.data();
    for s in 0..ci {
        let dst = &mut gin.data[s * h * w..(s + 1) * h * w];
        for t in 0..co {
            let src = &grad_out.data[t * oh * ow..(t + 1) * oh * ow];
            for j in 0..kh {
                let (y0, y1) = valid_range(oh, h, j, stride, pad);
                for k in 0..kw {
                    let wt = kd[((s * co + t) * kh + j) * kw + k];
                    if wt == 0.0 {
                        continue;
                    }
                    let (x0, x1) = valid_range(ow, w, k, stride, pad);
                    for oy in y0..y1 {
                        let iy = oy * stride + j - pad;
                        for ox in x0..x1 {
                            dst[iy * w + ox * stride + k - pad] += wt * src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    Ok(gin)
}

/// Gradient of a convolution with respect to its `(f_in, f_out, h, w)` kernel.
pub fn conv2d_backward_kernel(
    x: &FeatureMap,
    grad_out: &FeatureMap,
    kernel_shape: [usize; 4],
    stride: usize,
    pad: usize,
) -> Result<DenseTensor> {
    let [ci, co, kh, kw] = kernel_shape;
    let (oh, ow) = (grad_out.height, grad_out.width);
    if x.channels != ci
        || grad_out.channels != co
        || conv_output_size(x.height, kh, stride, pad)? != oh
        || conv_output_size(x.width, kw, stride, pad)? != ow
    {
        return Err(Error::Shape("kernel gradient shapes do not match".into()));
    }
    let (h, w) = (x.height, x.width);
    let mut g = vec![0.0; ci * co * kh * kw];
    for s in 0..ci {
        let src = &x.data[s * h * w..(s + 1) * h * w];
        for t in 0..co {
            let go = &grad_out.data[t * oh * ow..(t + 1) * oh * ow];
            for j in 0..kh {
                let (y0, y1) = valid_range(oh, h, j, stride, pad);
                for k in 0..kw {
                    let (x0, x1) = valid_range(ow, w, k, stride, pad);
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * stride + j - pad;
                        for ox in x0..x1 {
                            acc += go[oy * ow + ox] * src[iy * w + ox * stride + k - pad];
                        }
                    }
                    g[((s * co + t) * kh + j) * kw + k] = acc;
                }
            }
        }
    }
    DenseTensor::new(vec![ci, co, kh, kw], g)
}

/// Multiply-accumulate counts of a dense convolution and its three-stage
/// factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvFlops {
    pub baseline_macs: u64,
    pub factorized_macs: u64,
}

impl ConvFlops {
    /// Baseline over factorized MACs; above 1 means the factorization is cheaper.
    pub fn ratio(&self) -> f64 {
        self.baseline_macs as f64 / self.factorized_macs as f64
    }
}

/// MAC counts on an `out_h x out_w` output. Missing ranks default to full.
pub fn conv_flops(
    f_in: usize,
    f_out: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    ranks: Option<(usize, usize)>,
) -> ConvFlops {
    let (r_in, r_out) = ranks.unwrap_or((f_in, f_out));
    let hw = (out_h * out_w) as u64;
    let (f_in, f_out, kh, kw, r_in, r_out) =
        (f_in as u64, f_out as u64, kh as u64, kw as u64, r_in as u64, r_out as u64);
    ConvFlops {
        baseline_macs: hw * f_in * f_out * kh * kw,
        factorized_macs: hw * (f_in * r_in + r_in * r_out * kh * kw + r_out * f_out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent oracle: unroll patches into columns, then one matrix
    /// product with the kernel reshaped to `f_out x (f_in kh kw)`.
    fn im2col_conv(x: &FeatureMap, k: &DenseTensor, stride: usize, pad: usize) -> FeatureMap {
        let [ci, co, kh, kw] = [k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]];
        let oh = (x.height() + 2 * pad - kh) / stride + 1;
        let ow = (x.width() + 2 * pad - kw) / stride + 1;
        let patch = ci * kh * kw;
        let mut cols = vec![0.0; patch * oh * ow];
        for s in 0..ci {
            for j in 0..kh {
                for q in 0..kw {
                    let row = (s * kh + j) * kw + q;
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let iy = (oy * stride + j) as isize - pad as isize;
                            let ix = (ox * stride + q) as isize - pad as isize;
                            if iy >= 0 && ix >= 0 && (iy as usize) < x.height() && (ix as usize) < x.width() {
                                cols[row * oh * ow + oy * ow + ox] = x.get(s, iy as usize, ix as usize);
                            }
                        }
                    }
                }
            }
        }
        let wmat = Matrix::from_fn(co, patch, |t, p| {
            let s = p / (kh * kw);
            let j = (p / kw) % kh;
            let q = p % kw;
            k.get(&[s, t, j, q]).unwrap()
        })
        .unwrap();
        let prod = wmat.matmul(&Matrix::new(patch, oh * ow, cols).unwrap()).unwrap();
        FeatureMap::new(co, oh, ow, prod.data().to_vec()).unwrap()
    }

    fn random_map(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> FeatureMap {
        FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn random_kernel(shape: [usize; 4], rng: &mut ChaCha8Rng) -> DenseTensor {
        DenseTensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn max_diff(a: &FeatureMap, b: &FeatureMap) -> f64 {
        assert!(a.same_shape(b));
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn identity_channel_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_map(3, 4, 5, &mut rng);
        let k = DenseTensor::from_fn(&[3, 3, 1, 1], |i| if i[0] == i[1] { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(conv2d_reference(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn counting_taps() {
        let x = FeatureMap::new(1, 3, 3, vec![1.0; 9]).unwrap();
        let k = DenseTensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = conv2d_reference(&x, &k, 1, 1).unwrap();
        assert_eq!(y.data(), &[4., 6., 4., 6., 9., 6., 4., 6., 4.]);
    }

    #[test]
    fn matches_im2col_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for &(stride, pad) in &[(1, 0), (1, 1), (2, 0), (2, 1)] {
            let x = random_map(4, 7, 6, &mut rng);
            let k = random_kernel([4, 5, 3, 3], &mut rng);
            let got = conv2d_reference(&x, &k, stride, pad).unwrap();
            let want = im2col_conv(&x, &k, stride, pad);
            assert!(max_diff(&got, &want) <= 1e-12);
        }
    }

    #[test]
    fn output_size_formula() {
        for h in [5usize, 6, 7, 8] {
            for stride in [1, 2] {
                for pad in [0, 1] {
                    let x = FeatureMap::zeros(1, h, h + 1);
                    let k = DenseTensor::zeros(&[1, 1, 3, 3]).unwrap();
                    let y = conv2d_reference(&x, &k, stride, pad).unwrap();
                    assert_eq!(y.height(), (h + 2 * pad - 3) / stride + 1);
                    assert_eq!(y.width(), (h + 1 + 2 * pad - 3) / stride + 1);
                }
            }
        }
    }

    #[test]
    fn shape_errors() {
        let x = FeatureMap::zeros(2, 4, 4);
        let k = DenseTensor::zeros(&[3, 1, 3, 3]).unwrap();
        assert!(matches!(conv2d_reference(&x, &k, 1, 1), Err(Error::Shape(_))));
        let big = DenseTensor::zeros(&[2, 1, 7, 7]).unwrap();
        assert!(conv2d_reference(&x, &big, 1, 1).is_err());
        assert!(conv2d_reference(&x, &DenseTensor::zeros(&[2, 1, 3]).unwrap(), 1, 1).is_err());
    }

    #[test]
    fn factorized_zero_input_and_identity_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let core = random_kernel([4, 3, 3, 3], &mut rng);
        let fc = FactorizedConv::new(Matrix::identity(4), core.clone(), Matrix::identity(3)).unwrap();
        let zero = FeatureMap::zeros(4, 5, 5);
        assert!(factorized_conv2d(&zero, &fc, 1, 1).unwrap().data().iter().all(|&v| v == 0.0));
        let x = random_map(4, 5, 5, &mut rng);
        let a = factorized_conv2d(&x, &fc, 1, 1).unwrap();
        let b = conv2d_reference(&x, &core, 1, 1).unwrap();
        assert!(max_diff(&a, &b) <= 1e-12);
    }

    #[test]
    fn factorized_matches_reconstructed_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let u_in = Matrix::from_fn(8, 3, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let u_out = Matrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let core = random_kernel([3, 2, 3, 3], &mut rng);
        let fc = FactorizedConv::new(u_in, core, u_out).unwrap();
        let x = random_map(8, 6, 6, &mut rng);
        for &(stride, pad) in &[(1, 1), (2, 1), (1, 0)] {
            let a = factorized_conv2d(&x, &fc, stride, pad).unwrap();
            let b = conv2d_reference(&x, &fc.kernel(), stride, pad).unwrap();
            assert!(max_diff(&a, &b) <= 1e-10 * b.norm());
        }
    }

    /// Backward passes checked against the adjoint identity
    /// `<conv(x), g> = <x, conv_in^T(g)> = <K, conv_k^T(x, g)>`.
    #[test]
    fn backward_passes_are_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(stride, pad) in &[(1, 1), (2, 1), (1, 0), (2, 0)] {
            let x = random_map(3, 7, 6, &mut rng);
            let k = random_kernel([3, 4, 3, 3], &mut rng);
            let y = conv2d_reference(&x, &k, stride, pad).unwrap();
            let g = random_map(4, y.height(), y.width(), &mut rng);
            let lhs: f64 = y.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
            let gx = conv2d_backward_input(&g, &k, 7, 6, stride, pad).unwrap();
            let mid: f64 = x.data().iter().zip(gx.data()).map(|(a, b)| a * b).sum();
            let gk = conv2d_backward_kernel(&x, &g, [3, 4, 3, 3], stride, pad).unwrap();
            let rhs = k.inner(&gk).unwrap();
            assert!((lhs - mid).abs() <= 1e-12 * lhs.abs().max(1.0));
            assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn flop_counts() {
        let f = conv_flops(128, 128, 3, 3, 64, 64, Some((64, 64)));
        assert_eq!(f.baseline_macs, 603_979_776);
        assert_eq!(f.factorized_macs, 218_103_808);
        let full = conv_flops(128, 128, 3, 3, 64, 64, None);
        assert!(full.factorized_macs > full.baseline_macs);
        let one = conv_flops(128, 128, 3, 3, 64, 64, Some((1, 1)));
        assert_eq!(one.factorized_macs, 4096 * (128 + 9 + 128));
    }
}
