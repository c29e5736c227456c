use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tnet_bench::{factorized, feature_map, tensor};
use tnet_core::tnet::{conv2d_reference, factorized_conv2d};

const CHANNELS: usize = 128;
const SIDE: usize = 32;

fn convolutions(c: &mut Criterion) {
    let x = feature_map(CHANNELS, SIDE, 1);
    let kernel = tensor(&[CHANNELS, CHANNELS, 3, 3], 2);
    let mut group = c.benchmark_group("conv3x3_128ch_32px");
    group.sample_size(20);
    group.bench_function("reference", |b| b.iter(|| conv2d_reference(black_box(&x), &kernel, 1, 1).unwrap()));
    for rank in [96, 64, 50, 32, 16] {
        let fc = factorized(CHANNELS, rank, 3);
        group.bench_with_input(BenchmarkId::new("factorized", rank), &fc, |b, fc| {
            b.iter(|| factorized_conv2d(black_box(&x), fc, 1, 1).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, convolutions);
criterion_main!(benches);
