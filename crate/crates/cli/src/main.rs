//! `podlrom`: command line driver for snapshot generation, randomized POD,
//! training, inference, evaluation and the parameter studies.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Failure with the exit code it maps to: 2 for bad input (config, missing
/// files, malformed data), 1 for failures during computation.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        Self { code: 2, message: msg.into() }
    }

    pub fn compute(msg: impl Into<String>) -> Self {
        Self { code: 1, message: msg.into() }
    }
}

impl From<podlrom::Error> for CliError {
    fn from(e: podlrom::Error) -> Self {
        use podlrom::Error as E;
        let code = match &e {
            E::InvalidArgument(_) | E::Format(_) | E::ArchitectureMismatch(_) => 2,
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProblemKind {
    Adr,
    Monodomain,
    Pulse1d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
}

#[derive(Parser)]
#[command(name = "podlrom", version, about = "POD-DL-ROM reduced order modelling pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Write a starter config for one of the built-in problems.
    Template {
        #[arg(long, value_enum)]
        problem: ProblemKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the full-order model on a parameter sample and write a snapshot file.
    Gen {
        #[arg(long)]
        config: PathBuf,
        /// must match the problem in the config when given
        #[arg(long, value_enum)]
        problem: Option<ProblemKind>,
        #[arg(long, value_enum, default_value = "train")]
        split: Split,
        #[arg(long)]
        out: PathBuf,
        /// seed for random parameter sampling (default 0)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compute a randomized POD basis from a snapshot file.
    Rsvd {
        #[arg(long)]
        snaps: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// overrides `rsvd.rank`
        #[arg(long)]
        rank: Option<usize>,
        /// pick the smallest of 4, 16, 64, ... (up to the rank) whose projection
        /// error on the snapshots is below this value
        #[arg(long)]
        select_tol: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the autoencoder and parameter network on POD coordinates.
    Train {
        #[arg(long)]
        snaps: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// start from this checkpoint's weights (same architecture)
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// sets both the shuffle and the initialization seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained model at new (t, mu) points.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        /// snapshot file (its parameter columns are used) or CSV rows `t,mu1,...`
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare two snapshot files and write per-step error statistics.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        approx: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model per POD dimension and tabulate the error split.
    StudyN {
        #[arg(long)]
        snaps: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        ranks: Vec<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on random parameter sets of growing size and fit the error decay.
    StudyNtrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time inference against the full-order solver.
    Bench {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        basis: PathBuf,
        #[arg(long)]
        test: PathBuf,
        /// config with the problem section, to time the full-order solve
        #[arg(long)]
        config: Option<PathBuf>,
        /// timing file written by `train`
        #[arg(long)]
        train_timing: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the randomized SVD against a full SVD of the same snapshots.
    BenchSvd {
        #[arg(long)]
        snaps: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "4,16,64")]
        ranks: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
