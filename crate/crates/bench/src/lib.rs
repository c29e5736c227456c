//! Seeded fixtures shared by the criterion benches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tnet_core::{DenseTensor, FactorizedConv, FeatureMap, Matrix};

pub fn feature_map(channels: usize, side: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap::from_fn(channels, side, side, |_, _, _| rng.random_range(-1.0..1.0)).expect("finite")
}

pub fn tensor(shape: &[usize], seed: u64) -> DenseTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DenseTensor::from_fn(shape, |_| rng.random_range(-1.0..1.0)).expect("finite")
}

/// A 3x3 factorized convolution on `channels` features with `R4 = R5 = rank`.
pub fn factorized(channels: usize, rank: usize, seed: u64) -> FactorizedConv {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = |r, c| Matrix::from_fn(r, c, |_, _| rng.random_range(-0.1..0.1)).expect("finite");
    let (u_in, u_out) = (m(channels, rank), m(channels, rank));
    FactorizedConv::new(u_in, tensor(&[rank, rank, 3, 3], seed ^ 0x9e37), u_out).expect("consistent shapes")
}
