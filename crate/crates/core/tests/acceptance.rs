//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed or overran its time budget.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tnet_core::analysis::{
    count_dense, count_layerwise, count_mps, count_shared_features, count_tucker, fit_overhead, table2, table3,
    ParamMethod, DEFAULT_OVERHEAD,
};
use tnet_core::decomp::{
    hooi, hosvd, mps_reconstruct, relative_error, tt_svd, tucker_reconstruct, HooiOptions, MpsCores, TuckerFactors,
};
use tnet_core::grad::{
    finite_difference_check, init_toy, train_toy, FdOptions, NetworkLoss, QuadraticLoss, RmsProp, ToyNetwork, ToyTask,
    ToyTaskConfig,
};
use tnet_core::tensor::DenseTensor;
use tnet_core::tnet::perf::{run_conv_bench, BenchConfig, Timing};
use tnet_core::tnet::{conv2d_reference, conv_flops, factorized_conv2d, partial_core_contract};
use tnet_core::{ArchConfig, FeatureMap, Matrix};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run(id: u32, name: &str, budget: Duration, f: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let elapsed = start.elapsed();
    let (ok, detail) = match result {
        Ok(d) if elapsed <= budget => (true, d),
        Ok(d) => (false, format!("{d}; exceeded budget {budget:?}")),
        Err(e) => (false, e),
    };
    println!(
        "[{}] criterion {id}: {name} ({:.2}s) {detail}",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    ok
}

fn ratio_rows(rows: &[tnet_core::analysis::ParamReport], tol: f64) -> Check {
    let mut worst: f64 = 0.0;
    for r in rows {
        let p = r.published.ok_or("row without a published ratio")?;
        let d = (r.ratio - p).abs();
        ensure(d <= tol, || {
            format!("{} [{}]: {:.4} vs published {p}", r.method.name(), r.descriptor, r.ratio)
        })?;
        worst = worst.max(d);
    }
    Ok(format!("{} rows, worst deviation {worst:.4}", rows.len()))
}

fn criterion_1() -> Check {
    let arch = ArchConfig::full_scale();
    ensure(fit_overhead() == DEFAULT_OVERHEAD, || "default overhead is not the fitted value".into())?;
    let rows = table2(&arch, DEFAULT_OVERHEAD).map_err(|e| e.to_string())?;
    let tucker: Vec<_> = rows.into_iter().filter(|r| r.method == ParamMethod::Tucker).collect();
    ensure(tucker.len() == 13, || format!("{} Tucker rows", tucker.len()))?;
    for (desc, want) in [
        ("4,4,3,2,96,96,3,3", 1.64),
        ("4,4,3,2,32,32,3,3", 6.25),
        ("1,4,3,2,128,128,3,3", 3.03),
        ("4,4,3,2,128,128,2,2", 1.98),
    ] {
        let r = tucker.iter().find(|r| r.descriptor == desc).ok_or(format!("missing anchor {desc}"))?;
        ensure((r.ratio - want).abs() <= 0.1, || format!("anchor {desc}: {:.4}", r.ratio))?;
    }
    ratio_rows(&tucker, 0.1)
}

fn criterion_2() -> Check {
    let arch = ArchConfig::full_scale();
    let rows = table3(&arch, DEFAULT_OVERHEAD).map_err(|e| e.to_string())?;
    let compressed: Vec<_> = rows.into_iter().filter(|r| r.method != ParamMethod::Dense).collect();
    ensure(compressed.len() == 7, || format!("{} compressed rows", compressed.len()))?;
    let anchor = compressed
        .iter()
        .find(|r| r.descriptor == "2,2,2,2,96,96,3,3")
        .ok_or("missing anchor")?;
    ensure((anchor.ratio - 5.2).abs() <= 0.15, || format!("anchor: {:.4}", anchor.ratio))?;
    let mps = compressed.iter().find(|r| r.method == ParamMethod::Mps).ok_or("missing MPS row")?;
    ensure((mps.ratio - 7.4).abs() <= 0.15, || format!("MPS: {:.4}", mps.ratio))?;
    ratio_rows(&compressed, 0.15)
}

fn big(v: usize) -> BigUint {
    BigUint::from(v)
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..50 {
        let dims: [usize; 8] = std::array::from_fn(|k| match k {
            4 | 5 => rng.random_range(1..=256),
            6 | 7 => rng.random_range(1..=7),
            _ => rng.random_range(1..=6),
        });
        let arch = ArchConfig::new(dims, 0).map_err(|e| e.to_string())?;
        let ranks: Vec<usize> = dims.iter().map(|&i| rng.random_range(1..=i)).collect();

        let dense: BigUint = dims.iter().map(|&i| big(i)).product();
        ensure(BigUint::from(count_dense(&arch)) == dense, || format!("case {case}: dense count"))?;

        let core: BigUint = ranks.iter().map(|&r| big(r)).product();
        let factors: BigUint = ranks.iter().zip(&dims).map(|(&r, &i)| big(r) * big(i)).sum();
        let got = count_tucker(&arch, &ranks).map_err(|e| e.to_string())?;
        ensure(BigUint::from(got) == core + factors, || format!("case {case}: Tucker count"))?;

        let bounds = tnet_core::decomp::attainable_tt_ranks(&dims);
        let chain: Vec<usize> = (0..=8)
            .map(|k| if k == 0 || k == 8 { 1 } else { rng.random_range(1..=bounds[k].min(64)) })
            .collect();
        let mps: BigUint = (0..8).map(|k| big(chain[k]) * big(dims[k]) * big(chain[k + 1])).sum();
        let got = count_mps(&arch, &chain).map_err(|e| e.to_string())?;
        ensure(BigUint::from(got) == mps, || format!("case {case}: MPS count"))?;

        let (r4, r5) = (ranks[4], ranks[5]);
        let n_conv = big(dims[0]) * big(dims[1]) * big(dims[2]) * big(dims[3]);
        let feature = big(r4) * big(dims[4]) + big(r5) * big(dims[5]);
        let layerwise = BigUint::from(count_layerwise(&arch, r4, r5).map_err(|e| e.to_string())?);
        let shared = BigUint::from(count_shared_features(&arch, r4, r5).map_err(|e| e.to_string())?);
        let per_layer = big(r4) * big(r5) * big(dims[6]) * big(dims[7]) + feature.clone();
        ensure(layerwise == n_conv.clone() * per_layer, || format!("case {case}: layerwise count"))?;
        ensure(layerwise - shared == (n_conv - 1u32) * feature, || format!("case {case}: savings identity"))?;
    }
    Ok("50 random configurations exact".into())
}

fn criterion_4() -> Check {
    let arch = ArchConfig::toy();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    let mut layers = 0;
    for ranks in [[2, 2, 3, 2, 8, 8, 3, 3], [1, 2, 2, 1, 3, 5, 2, 3]] {
        let f = TuckerFactors::random(&arch.dims(), &ranks, &mut rng).map_err(|e| e.to_string())?;
        let full = tucker_reconstruct(&f);
        for idx in arch.layer_indices() {
            let fc = partial_core_contract(&f, idx).map_err(|e| e.to_string())?;
            let kernel = full.subtensor(&idx).map_err(|e| e.to_string())?;
            for _ in 0..10 {
                let x = FeatureMap::from_fn(8, 12, 12, |_, _, _| rng.sample(StandardNormal)).map_err(|e| e.to_string())?;
                let a = factorized_conv2d(&x, &fc, 1, 1).map_err(|e| e.to_string())?;
                let b = conv2d_reference(&x, &kernel, 1, 1).map_err(|e| e.to_string())?;
                let diff = a.data().iter().zip(b.data()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
                let rel = diff / b.norm();
                ensure(rel <= 1e-10, || format!("layer {idx:?}: relative error {rel:e}"))?;
                worst = worst.max(rel);
            }
            layers += 1;
        }
    }
    Ok(format!("{layers} layer slices x 10 inputs, worst relative error {worst:.2e}"))
}

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let e = |x: tnet_core::Error| x.to_string();

    let shape = [3, 4, 2, 5, 3];
    let t = DenseTensor::from_fn(&shape, |_| rng.sample(StandardNormal)).map_err(e)?;
    let hosvd_err = relative_error(&t, &tucker_reconstruct(&hosvd(&t, &shape).map_err(e)?)).map_err(e)?;
    ensure(hosvd_err <= 1e-10, || format!("HOSVD full rank: {hosvd_err:e}"))?;

    let mut hooi_worst: f64 = 0.0;
    for (shape, ranks) in [
        (vec![6, 7, 5, 4], vec![2, 3, 2, 2]),
        (vec![5, 5, 5], vec![3, 2, 4]),
        (vec![2, 2, 3, 2, 8, 8, 3, 3], vec![2, 1, 2, 2, 3, 4, 2, 2]),
    ] {
        let synth = tucker_reconstruct(&TuckerFactors::random(&shape, &ranks, &mut rng).map_err(e)?);
        let res = hooi(&synth, &ranks, HooiOptions::default()).map_err(e)?;
        let err = relative_error(&synth, &tucker_reconstruct(&res.factors)).map_err(e)?;
        ensure(err <= 1e-8, || format!("HOOI {shape:?}: {err:e}"))?;
        ensure(res.errors.windows(2).all(|w| w[1] <= w[0]), || {
            format!("HOOI {shape:?}: non-monotone errors {:?}", res.errors)
        })?;
        hooi_worst = hooi_worst.max(err);
    }

    let mut tt_worst: f64 = 0.0;
    for (shape, chain) in [
        (vec![4, 3, 5, 2, 3], vec![1, 2, 3, 2, 2, 1]),
        (vec![2, 2, 3, 2, 8, 8, 3, 3], vec![1, 2, 3, 4, 5, 4, 3, 3, 1]),
    ] {
        let synth = mps_reconstruct(&MpsCores::random(&shape, &chain, &mut rng).map_err(e)?);
        let out = tt_svd(&synth, &chain[1..chain.len() - 1]).map_err(e)?;
        ensure(out.clamped.is_empty(), || "unexpected rank clamp".into())?;
        let err = relative_error(&synth, &mps_reconstruct(&out.cores)).map_err(e)?;
        ensure(err <= 1e-8, || format!("TT-SVD {shape:?}: {err:e}"))?;
        tt_worst = tt_worst.max(err);
    }

    let shape = [2, 2, 3, 2, 8, 8, 3, 3];
    let mps = MpsCores::random(&shape, &[1, 2, 4, 6, 8, 8, 6, 3, 1], &mut rng).map_err(e)?;
    let full = mps_reconstruct(&mps);
    for _ in 0..100 {
        let idx: Vec<usize> = shape.iter().map(|&n| rng.random_range(0..n)).collect();
        let (a, b) = (mps.element(&idx).map_err(e)?, full.get(&idx).map_err(e)?);
        ensure(a == b, || format!("MPS element {idx:?}: {a} vs {b}"))?;
    }
    Ok(format!(
        "HOSVD {hosvd_err:.1e}, HOOI worst {hooi_worst:.1e}, TT-SVD worst {tt_worst:.1e}, 100 MPS elements exact"
    ))
}

fn criterion_6() -> Check {
    let e = |x: tnet_core::Error| x.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let shape = [2, 2, 3, 2, 4, 4, 3, 3];
    let t = DenseTensor::from_fn(&shape, |_| rng.sample(StandardNormal)).map_err(e)?;
    let f = hosvd(&t, &shape).map_err(e)?;
    let quad = finite_difference_check(&QuadraticLoss::default(), &f, FdOptions::default()).map_err(e)?;
    ensure(quad.max_discrepancy <= 1e-5, || format!("quadratic: {:e}", quad.max_discrepancy))?;

    let task = ToyTask::generate(&ToyTaskConfig {
        samples: 2,
        ..ToyTaskConfig::default()
    })
    .map_err(e)?;
    let arch = ArchConfig::toy();
    let net = ToyNetwork::new(&arch, &task).map_err(e)?;
    let (f, mut aux) = init_toy(&net, &[2, 2, 3, 2, 4, 4, 3, 3], 6).map_err(e)?;
    // Heads start at zero, which would leave every weight gradient zero.
    for h in aux.head_w.iter_mut() {
        *h = Matrix::from_fn(h.rows(), h.cols(), |_, _| rng.random_range(-0.5..0.5)).map_err(e)?;
    }
    let loss = NetworkLoss {
        net: &net,
        aux: &aux,
        task: &task,
    };
    let netw = finite_difference_check(&loss, &f, FdOptions::default()).map_err(e)?;
    ensure(netw.max_discrepancy <= 1e-5, || format!("network: {:e}", netw.max_discrepancy))?;
    Ok(format!(
        "quadratic {:.1e} over {} params, network {:.1e} over {} params",
        quad.max_discrepancy, quad.probed, netw.max_discrepancy, netw.probed
    ))
}

fn criterion_7() -> Check {
    let e = |x: tnet_core::Error| x.to_string();
    let task = ToyTask::generate(&ToyTaskConfig {
        seed: 42,
        ..ToyTaskConfig::default()
    })
    .map_err(e)?;
    let arch = ArchConfig::toy();
    let opt = RmsProp::default();
    let full = [2, 2, 3, 2, 8, 8, 3, 3];
    let half = [2, 2, 3, 2, 4, 4, 3, 3];
    let a = train_toy(&arch, &full, &task, 300, opt).map_err(e)?;
    let fr = a.losses[299] / a.losses[0];
    ensure(fr <= 0.10, || format!("full ranks: final/initial {fr:.4}"))?;
    let b = train_toy(&arch, &half, &task, 300, opt).map_err(e)?;
    let hr = b.losses[299] / b.losses[0];
    ensure(hr <= 0.30, || format!("half-feature ranks: final/initial {hr:.4}"))?;
    let again = train_toy(&arch, &full, &task, 300, opt).map_err(e)?;
    let same = again.losses.iter().zip(&a.losses).all(|(x, y)| x.to_bits() == y.to_bits())
        && again.factors == a.factors
        && again.aux == a.aux;
    ensure(same, || "rerun is not bit-identical".into())?;
    Ok(format!(
        "full {:.3e} -> {:.3e} ({:.1}%), half {:.3e} -> {:.3e} ({:.1}%), rerun bit-identical",
        a.losses[0],
        a.losses[299],
        100.0 * fr,
        b.losses[0],
        b.losses[299],
        100.0 * hr
    ))
}

fn criterion_8() -> Check {
    let e = |x: tnet_core::Error| x.to_string();
    let mut cfg = BenchConfig::standard(1.0).map_err(e)?;
    cfg.timing = Timing { warmups: 1, runs: 5 };
    let rows = run_conv_bench(&cfg, &[128, 32, 16]).map_err(e)?;
    for r in &rows {
        let want = conv_flops(128, 128, 3, 3, cfg.height, cfg.width, Some((r.rank, r.rank)));
        ensure(r.baseline_macs == want.baseline_macs && r.factorized_macs == want.factorized_macs, || {
            format!("rank {}: MAC counts differ from conv_flops", r.rank)
        })?;
    }
    ensure(rows[0].mac_ratio < 1.0, || "full rank should cost more MACs than dense".into())?;
    for r in &rows[1..] {
        ensure(r.speedup > 1.0, || format!("rank {}: speedup {:.2}", r.rank, r.speedup))?;
    }
    Ok(rows
        .iter()
        .map(|r| format!("R={} MACx{:.2} speedup {:.2}", r.rank, r.mac_ratio, r.speedup))
        .collect::<Vec<_>>()
        .join(", "))
}

fn main() -> ExitCode {
    let s = Duration::from_secs;
    let results = [
        run(1, "single-mode ablation ratios within 0.1", s(1), criterion_1),
        run(2, "multi-mode and MPS ratios within 0.15", s(1), criterion_2),
        run(3, "parameter counts against big-integer oracles", s(10), criterion_3),
        run(4, "factorized convolution equivalence", s(30), criterion_4),
        run(5, "decomposition exactness", s(60), criterion_5),
        run(6, "gradient correctness", s(60), criterion_6),
        run(7, "end-to-end trainability", s(300), criterion_7),
        run(8, "convolution cost trend", s(120), criterion_8),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
