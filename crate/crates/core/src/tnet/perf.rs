//! Wall-clock comparison of dense and factorized convolutions.
//!
//! Timings are the median of a fixed number of runs after warmup, on the
//! calling thread. Absolute numbers depend on the machine; the MAC ratio
//! from [`conv_flops`] is exact.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{DenseTensor, Matrix};

use super::conv::{conv2d_reference, conv_flops, factorized_conv2d, FeatureMap};
use super::weights::FactorizedConv;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timing {
    pub warmups: usize,
    pub runs: usize,
}

impl Default for Timing {
    fn default() -> Self {
        Self { warmups: 5, runs: 30 }
    }
}

/// Median duration of `f` over `timing.runs` calls.
pub fn median_time(timing: Timing, mut f: impl FnMut()) -> Duration {
    for _ in 0..timing.warmups {
        f();
    }
    let mut samples: Vec<Duration> = (0..timing.runs.max(1))
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed()
        })
        .collect();
    samples.sort();
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        (samples[n / 2 - 1] + samples[n / 2]) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub timing: Timing,
    pub seed: u64,
}

impl BenchConfig {
    /// A 3x3 convolution keeping 128 channels on a 64x64 map, spatially
    /// scaled by `scale`.
    pub fn standard(scale: f64) -> Result<Self> {
        if !scale.is_finite() || scale <= 0.0 {
            return Err(Error::Shape(format!("scale must be positive, got {scale}")));
        }
        let side = ((64.0 * scale).round() as usize).max(3);
        Ok(Self {
            channels: 128,
            height: side,
            width: side,
            kernel: 3,
            timing: Timing::default(),
            seed: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub rank: usize,
    /// Dense kernel parameters over factorized parameters.
    pub kernel_compression: f64,
    pub baseline_macs: u64,
    pub factorized_macs: u64,
    pub mac_ratio: f64,
    pub reference_ms: f64,
    pub factorized_ms: f64,
    pub speedup: f64,
}

/// Times the reference convolution once and the factorized one at each
/// feature rank (`R_4 = R_5 = rank`), stride 1, padding `kernel / 2`.
pub fn run_conv_bench(cfg: &BenchConfig, ranks: &[usize]) -> Result<Vec<BenchRow>> {
    let c = cfg.channels;
    let k = cfg.kernel;
    if let Some(&r) = ranks.iter().find(|&&r| r == 0 || r > c) {
        return Err(Error::Rank(format!("bench rank {r} must lie in 1..={c}")));
    }
    let pad = k / 2;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let x = FeatureMap::from_fn(c, cfg.height, cfg.width, |_, _, _| rng.random_range(-1.0..1.0))?;
    let kernel = DenseTensor::from_fn(&[c, c, k, k], |_| rng.random_range(-0.1..0.1))?;
    let reference = median_time(cfg.timing, || {
        std::hint::black_box(conv2d_reference(&x, &kernel, 1, pad).expect("valid geometry"));
    });
    let reference_ms = reference.as_secs_f64() * 1e3;
    let out_h = cfg.height + 2 * pad - k + 1;
    let out_w = cfg.width + 2 * pad - k + 1;
    let dense_params = (c * c * k * k) as f64;

    ranks
        .iter()
        .map(|&r| {
            let fc = FactorizedConv::new(
                Matrix::from_fn(c, r, |_, _| rng.random_range(-0.1..0.1))?,
                DenseTensor::from_fn(&[r, r, k, k], |_| rng.random_range(-0.1..0.1))?,
                Matrix::from_fn(c, r, |_, _| rng.random_range(-0.1..0.1))?,
            )?;
            let t = median_time(cfg.timing, || {
                std::hint::black_box(factorized_conv2d(&x, &fc, 1, pad).expect("valid geometry"));
            });
            let flops = conv_flops(c, c, k, k, out_h, out_w, Some((r, r)));
            let factorized_ms = t.as_secs_f64() * 1e3;
            Ok(BenchRow {
                rank: r,
                kernel_compression: dense_params / (r * r * k * k + 2 * r * c) as f64,
                baseline_macs: flops.baseline_macs,
                factorized_macs: flops.factorized_macs,
                mac_ratio: flops.ratio(),
                reference_ms,
                factorized_ms,
                speedup: reference_ms / factorized_ms,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_of_odd_and_even_counts() {
        let mut calls = 0;
        median_time(Timing { warmups: 2, runs: 3 }, || calls += 1);
        assert_eq!(calls, 5);
    }

    #[test]
    fn tiny_bench_reports_exact_macs() {
        let mut cfg = BenchConfig::standard(0.125).unwrap();
        cfg.channels = 8;
        cfg.timing = Timing { warmups: 0, runs: 1 };
        let rows = run_conv_bench(&cfg, &[2, 8]).unwrap();
        assert_eq!(rows[0].baseline_macs, (8 * 8 * 8 * 8 * 9) as u64);
        assert_eq!(rows[0].factorized_macs, (8 * 8 * (16 + 36 + 16)) as u64);
        assert!(rows[1].mac_ratio < 1.0);
        assert!(run_conv_bench(&cfg, &[9]).is_err());
        assert!(BenchConfig::standard(0.0).is_err());
    }
}
