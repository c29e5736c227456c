use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use tnet_core::analysis::{dense_report, mps_report, render_table, table2, table3, to_csv, tucker_report, ParamReport};
use tnet_core::decomp::{
    attainable_tt_ranks, hooi, mps_reconstruct, read_bundle, relative_error, tt_svd, tucker_reconstruct, write_bundle,
    Decomposition, HooiOptions,
};
use tnet_core::grad::{train_toy_observed, RmsProp, ToyTask, ToyTaskConfig};
use tnet_core::tensor::read_tensor_file;
use tnet_core::tnet::perf::{run_conv_bench, BenchConfig, Timing};
use tnet_core::{ArchConfig, Error, Result};

use crate::ranks::parse_ranks;
use crate::{Command, MethodArg, TableArgs};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Analyze { table, tucker, mps } => analyze(&table, &tucker, &mps),
        Command::Table2 { table } => emit_table(&table, table2),
        Command::Table3 { table } => emit_table(&table, table3),
        Command::Decompose {
            input,
            method,
            ranks,
            out,
            max_iter,
            tol,
        } => decompose(&input, method, &ranks, &out, HooiOptions { tol, max_iter }),
        Command::ReconstructError { bundle, against } => reconstruct_error(&bundle, &against),
        Command::TrainToy {
            seed,
            steps,
            arch,
            ranks,
            lr,
            samples,
            csv,
            out,
        } => train(seed, steps, arch.as_deref(), &ranks, lr, samples, csv.as_deref(), out.as_deref()),
        Command::Bench {
            ranks,
            scale,
            runs,
            warmups,
            csv,
        } => bench(&ranks, scale, Timing { warmups, runs }, csv.as_deref()),
    }
}

fn load_arch(path: Option<&Path>, default: ArchConfig) -> Result<ArchConfig> {
    path.map_or(Ok(default), ArchConfig::from_json_file)
}

fn table_setup(t: &TableArgs) -> Result<(ArchConfig, u64)> {
    let arch = load_arch(t.arch.as_deref(), ArchConfig::full_scale())?;
    Ok((arch, t.overhead.unwrap_or(arch.overhead_params)))
}

fn emit_rows(rows: &[ParamReport], csv: Option<&Path>) -> Result<()> {
    print!("{}", render_table(rows));
    if let Some(path) = csv {
        fs::write(path, to_csv(rows))?;
    }
    Ok(())
}

fn analyze(t: &TableArgs, tucker: &[String], mps: &[String]) -> Result<()> {
    let (arch, overhead) = table_setup(t)?;
    let dims = arch.dims();
    let mut rows = vec![dense_report(&arch, overhead)];
    for spec in tucker {
        rows.push(tucker_report(&arch, &parse_ranks(spec, &dims)?, overhead)?);
    }
    for spec in mps {
        rows.push(mps_report(&arch, &parse_ranks(spec, &attainable_tt_ranks(&dims))?, overhead)?);
    }
    emit_rows(&rows, t.csv.as_deref())
}

fn emit_table(t: &TableArgs, build: fn(&ArchConfig, u64) -> Result<Vec<ParamReport>>) -> Result<()> {
    let (arch, overhead) = table_setup(t)?;
    emit_rows(&build(&arch, overhead)?, t.csv.as_deref())
}

fn decompose(input: &Path, method: MethodArg, ranks: &str, out: &Path, opts: HooiOptions) -> Result<()> {
    let t = read_tensor_file(input)?;
    let shape = t.shape().to_vec();
    let (d, err, iters) = match method {
        MethodArg::Tucker => {
            let ranks = parse_ranks(ranks, &shape)?;
            let res = hooi(&t, &ranks, opts)?;
            if res.iterations == opts.max_iter {
                eprintln!("warning: HOOI stopped at the sweep limit ({})", opts.max_iter);
            }
            let err = res.relative_error();
            (Decomposition::Tucker(res.factors), err, res.iterations)
        }
        MethodArg::Mps => {
            let chain = parse_ranks(ranks, &attainable_tt_ranks(&shape))?;
            if chain.len() != shape.len() + 1 || chain[0] != 1 || chain[shape.len()] != 1 {
                return Err(Error::Rank(format!(
                    "an MPS chain for order {} needs {} entries with unit ends, got {chain:?}",
                    shape.len(),
                    shape.len() + 1
                )));
            }
            let res = tt_svd(&t, &chain[1..shape.len()])?;
            for c in &res.clamped {
                eprintln!(
                    "warning: bond {} rank {} exceeds the attainable bound, using {}",
                    c.bond, c.requested, c.used
                );
            }
            let err = relative_error(&t, &mps_reconstruct(&res.cores))?;
            (Decomposition::Mps(res.cores), err, 1)
        }
    };
    let meta = write_bundle(out, &d, err, iters)?;
    println!("{}", serde_json::to_string_pretty(&meta)?);
    Ok(())
}

fn reconstruct_error(bundle: &Path, against: &Path) -> Result<()> {
    let (d, _) = read_bundle(bundle)?;
    let reference = read_tensor_file(against)?;
    let approx = match &d {
        Decomposition::Tucker(f) => tucker_reconstruct(f),
        Decomposition::Mps(c) => mps_reconstruct(c),
    };
    println!("{:.16e}", relative_error(&reference, &approx)?);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    seed: u64,
    steps: usize,
    arch: Option<&Path>,
    ranks: &str,
    lr: f64,
    samples: usize,
    csv: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    if steps == 0 {
        return Err(Error::Shape("--steps must be positive".into()));
    }
    let arch = load_arch(arch, ArchConfig::toy())?;
    let ranks = parse_ranks(ranks, &arch.dims())?;
    let task = ToyTask::generate(&ToyTaskConfig {
        seed,
        samples,
        ..ToyTaskConfig::default()
    })?;
    let opt = RmsProp {
        lr,
        ..RmsProp::default()
    };
    let every = (steps / 10).max(1);
    let outcome = train_toy_observed(&arch, &ranks, &task, steps, opt, |step, _, _, loss| {
        if step % every == 0 {
            println!("step {step:>6}  loss {loss:.6e}");
        }
        Ok(())
    })?;
    let losses = &outcome.losses;
    let (first, last) = (losses[0], losses[losses.len() - 1]);
    println!(
        "final loss {last:.6e} ({:.2}% of initial {first:.6e})",
        100.0 * last / first
    );
    if let Some(path) = csv {
        let mut text = String::from("step,loss\n");
        for (i, l) in losses.iter().enumerate() {
            let _ = writeln!(text, "{i},{l:.16e}");
        }
        fs::write(path, text)?;
    }
    if let Some(dir) = out {
        write_bundle(dir, &Decomposition::Tucker(outcome.factors), 0.0, steps)?;
    }
    Ok(())
}

fn bench(ranks: &str, scale: f64, timing: Timing, csv: Option<&Path>) -> Result<()> {
    let mut cfg = BenchConfig::standard(scale)?;
    cfg.timing = timing;
    let ranks = parse_ranks(ranks, &[cfg.channels])?;
    let rows = run_conv_bench(&cfg, &ranks)?;
    println!(
        "3x3 convolution, {} channels, {}x{} input, batch 1, single thread",
        cfg.channels, cfg.height, cfg.width
    );
    println!("wall-clock times are hardware dependent; MAC ratios are exact");
    println!(
        "{:>5}  {:>11}  {:>9}  {:>12}  {:>13}  {:>8}",
        "rank", "compression", "mac ratio", "dense ms", "factorized ms", "speedup"
    );
    for r in &rows {
        println!(
            "{:>5}  {:>10.2}x  {:>9.2}  {:>12.3}  {:>13.3}  {:>8.2}",
            r.rank, r.kernel_compression, r.mac_ratio, r.reference_ms, r.factorized_ms, r.speedup
        );
    }
    if let Some(path) = csv {
        let mut text =
            String::from("rank,kernel_compression,baseline_macs,factorized_macs,mac_ratio,reference_ms,factorized_ms,speedup\n");
        for r in &rows {
            let _ = writeln!(
                text,
                "{},{:.16e},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.rank,
                r.kernel_compression,
                r.baseline_macs,
                r.factorized_macs,
                r.mac_ratio,
                r.reference_ms,
                r.factorized_ms,
                r.speedup
            );
        }
        fs::write(path, text)?;
    }
    Ok(())
}
