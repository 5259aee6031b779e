//! `gnnla`: kernels, dataset generation, training and evaluation.
//!
//! Exit codes: 0 success, 1 numerical failure, 2 usage error.

mod config;
mod data;
mod kernel;
mod run;
mod svg;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// A numerical failure: exits with code 1.
#[derive(Debug)]
pub struct Numerical(pub String);

impl std::fmt::Display for Numerical {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Numerical {}

#[derive(Debug, Parser)]
#[command(name = "gnnla", version, about = "Sparse linear algebra as graph network layers")]
struct Cli {
    /// Worker threads for per-matrix parallelism; outputs do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a graph network kernel and its direct oracle.
    Kernel(kernel::KernelArgs),
    /// Generate a dataset and its manifest.
    GenData(run::GenDataArgs),
    /// Train a model on a generated dataset.
    Train(run::TrainArgs),
    /// Evaluate a checkpoint or a constant Jacobi weight.
    Eval(run::EvalArgs),
    /// Two-level solve on a Poisson matrix; residual histories as CSV.
    DemoAmg(run::DemoAmgArgs),
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use gnn_linalg::Error as E;
    for cause in err.chain() {
        if cause.is::<Numerical>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::Numerical(_) | E::NoConvergence { .. } | E::ZeroDiagonal { .. } => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Kernel(a) => kernel::run(a),
        Command::GenData(a) => run::gen_data(a),
        Command::Train(a) => run::train(a),
        Command::Eval(a) => run::eval(a),
        Command::DemoAmg(a) => run::demo_amg(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
