//! `tnet`: parameter tables, decompositions, toy training and convolution
//! benchmarks for whole-network weight tensors.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.

mod commands;
mod ranks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tnet", version, about = "Whole-network tensor parametrization toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct TableArgs {
    /// Architecture JSON; defaults to the 4-stack, 128-feature network.
    #[arg(long)]
    arch: Option<PathBuf>,
    /// Untensorized parameter count added to every total.
    #[arg(long)]
    overhead: Option<u64>,
    /// Also write the rows as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Tucker,
    Mps,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parameter counts and compression ratios for given rank choices.
    Analyze {
        #[command(flatten)]
        table: TableArgs,
        /// Tucker ranks `R0,...,R7` or `full`; repeatable.
        #[arg(long = "tucker-ranks", value_name = "LIST|full")]
        tucker: Vec<String>,
        /// MPS chain `1,R1,...,R7,1` or `full`; repeatable.
        #[arg(long = "mps-ranks", value_name = "LIST|full")]
        mps: Vec<String>,
    },
    /// Single-mode Tucker ablation table.
    Table2 {
        #[command(flatten)]
        table: TableArgs,
    },
    /// Multi-mode Tucker and MPS comparison table.
    Table3 {
        #[command(flatten)]
        table: TableArgs,
    },
    /// Decompose a tensor file into a bundle directory.
    Decompose {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Tucker ranks, or the MPS chain with its boundary ones; `full` for no truncation.
        #[arg(long, value_name = "LIST|full")]
        ranks: String,
        #[arg(long)]
        out: PathBuf,
        /// HOOI sweep limit.
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        /// HOOI tolerance on the relative change of fit.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Relative error of a bundle against a dense tensor file.
    ReconstructError {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        against: PathBuf,
    },
    /// Train the Tucker-parametrized toy hourglass on synthetic heatmaps.
    TrainToy {
        /// Seeds both the synthetic data and the initialization.
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        steps: usize,
        /// Architecture JSON; defaults to the 2-stack, 8-feature toy network.
        #[arg(long)]
        arch: Option<PathBuf>,
        #[arg(long, visible_alias = "tucker-ranks", value_name = "LIST|full", default_value = "full")]
        ranks: String,
        #[arg(long, default_value_t = 2.5e-4)]
        lr: f64,
        #[arg(long, default_value_t = 8)]
        samples: usize,
        /// Loss log, `step,loss`.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Bundle directory for the trained factors.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time dense against factorized 3x3 convolutions on 128 channels.
    Bench {
        /// Feature ranks `R4 = R5` to time.
        #[arg(long, value_name = "LIST", default_value = "128,96,64,50,32,16,1")]
        ranks: String,
        /// Spatial scale of the 64x64 input.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 30)]
        runs: usize,
        #[arg(long, default_value_t = 5)]
        warmups: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
