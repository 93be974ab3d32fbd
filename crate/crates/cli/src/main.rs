//! Command-line entry point for the task-arithmetic experiment pipeline.
//!
//! Every subcommand reads one JSON experiment config, resolves seeds,
//! and writes its artifacts plus a manifest into the output directory.
//! Exit codes: 0 success, 1 runtime or verification failure, 2 invalid
//! config or arguments, 3 missing checkpoint.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use tta_cli::config::ExperimentConfig;
use tta_cli::{ConfigError, MissingCheckpoint};
use tta_core::benchmarks::Method;

#[derive(Parser)]
#[command(name = "tta", version, about = "Task-vector editing experiments on synthetic suites")]
struct Cli {
    /// Path to the JSON experiment config.
    #[arg(long, global = true, default_value = "experiment.json")]
    config: PathBuf,

    /// Override the experiment seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the output directory from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (falls back to TTA_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Nonlinear,
    Linearized,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Nonlinear,
    Posthoc,
    Linearized,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Nonlinear => Method::Nonlinear,
            MethodArg::Posthoc => Method::Posthoc,
            MethodArg::Linearized => Method::Linearized,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisArg {
    Bump,
    Fourier,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the base model on the coarse-label corpus.
    Pretrain,
    /// Fine-tune one task and save its task vector.
    Finetune {
        /// Task index within the suite.
        #[arg(long)]
        task: usize,
        /// Training route: raw weights or the tangent model.
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Combine all task vectors and score multi-task accuracy.
    Addition {
        #[arg(long, value_enum)]
        method: MethodArg,
    },
    /// Subtract one task vector under a control-accuracy floor.
    Negation {
        #[arg(long, value_enum)]
        method: MethodArg,
        /// Task to forget.
        #[arg(long, default_value_t = 0)]
        task: usize,
    },
    /// Scan the mixing plane for a pair of task vectors.
    Disentangle {
        /// The two task indices, e.g. --tasks 0 1.
        #[arg(long, num_args = 2)]
        tasks: Vec<usize>,
        #[arg(long, value_enum)]
        method: MethodArg,
    },
    /// Kernel localization energies on train vs control points.
    Ntk {
        #[arg(long)]
        train_task: usize,
        #[arg(long)]
        control_task: usize,
        /// Evaluate the kernel at the pre-trained base instead of the
        /// fine-tuned weights.
        #[arg(long)]
        at_theta0: bool,
    },
    /// Check the localized/delocalized basis constructions; exits 0 only
    /// when the chosen basis behaves as expected.
    VerifySpectral {
        #[arg(long, value_enum)]
        basis: BasisArg,
    },
}

fn run(cli: Cli) -> Result<()> {
    commands::configure_threads(cli.threads)?;
    let resolved = ExperimentConfig::load(&cli.config)?.resolve(cli.seed, cli.out)?;
    match cli.command {
        Command::Pretrain => commands::run_pretrain(&resolved),
        Command::Finetune { task, mode } => {
            let method = match mode {
                ModeArg::Nonlinear => Method::Nonlinear,
                ModeArg::Linearized => Method::Linearized,
            };
            commands::run_finetune(&resolved, task, method)
        }
        Command::Addition { method } => commands::run_addition(&resolved, method.into()),
        Command::Negation { method, task } => commands::run_negation(&resolved, method.into(), task),
        Command::Disentangle { tasks, method } => {
            commands::run_disentangle(&resolved, tasks[0], tasks[1], method.into())
        }
        Command::Ntk { train_task, control_task, at_theta0 } => {
            commands::run_ntk(&resolved, train_task, control_task, at_theta0)
        }
        Command::VerifySpectral { basis } => {
            let b = match basis {
                BasisArg::Bump => commands::Basis::Bump,
                BasisArg::Fourier => commands::Basis::Fourier,
            };
            commands::run_verify_spectral(&resolved, b)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else if err.downcast_ref::<MissingCheckpoint>().is_some() {
                ExitCode::from(3)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
