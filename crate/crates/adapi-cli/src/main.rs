//! Command-line driver for the private-inference laboratory: teacher and
//! adaptive training, bundle export, two-party simulation, and cost reports.

mod commands;
mod config;

use adapi::runtime::ComparisonMode;
use adapi::train::FreezeMode;
use adapi::Error;
use clap::{Parser, Subcommand, ValueEnum};
use commands::{SimulateArgs, TrainMode};
use config::ExperimentConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "adapi", version, about = "Adaptive private-inference laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Adaptive,
    Single,
}

#[derive(Clone, Copy, ValueEnum)]
enum FreezeArg {
    FreezeCore,
    RetrainAll,
}

#[derive(Clone, Copy, ValueEnum)]
enum ComparisonArg {
    SignBit,
    OtPriced,
}

#[derive(Subcommand)]
enum Command {
    /// Train the dense teacher model and write its checkpoint and stats.
    TrainTeacher {
        #[arg(long)]
        config: PathBuf,
        /// Override the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the adaptive pipeline (soft phase + sequential levels) or the
    /// per-level single-model baseline.
    TrainAdaptive {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "adaptive")]
        mode: ModeArg,
        /// Override the sequential weight-freezing interpretation.
        #[arg(long, value_enum)]
        freeze_mode: Option<FreezeArg>,
    },
    /// Write the two share packages for one density level of a bundle.
    Export {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        level: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run two-party inference over the bundle's test set and reconcile the
    /// measured traffic against the analytic model.
    Simulate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        level: String,
        /// local (in-process pair) or tcp.
        #[arg(long, default_value = "local")]
        transport: String,
        /// both | server | client (tcp only).
        #[arg(long, default_value = "both")]
        role: String,
        #[arg(long, default_value_t = 9450)]
        port: u16,
        /// Cap the number of test inputs.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, value_enum)]
        comparison: Option<ComparisonArg>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic per-level cost table from a config or a trained bundle.
    CostReport {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a bundle: digests, mask nesting, realized densities.
    VerifyBundle {
        #[arg(long)]
        bundle: PathBuf,
    },
}

fn run(cli: Cli) -> adapi::Result<()> {
    match cli.command {
        Command::TrainTeacher { config, epochs } => {
            let mut cfg = ExperimentConfig::load(config)?;
            if let Some(e) = epochs {
                cfg.teacher.epochs = e;
            }
            commands::cmd_train_teacher(&cfg)
        }
        Command::TrainAdaptive {
            config,
            mode,
            freeze_mode,
        } => {
            let cfg = ExperimentConfig::load(config)?;
            let mode = match mode {
                ModeArg::Adaptive => TrainMode::Adaptive,
                ModeArg::Single => TrainMode::Single,
            };
            let freeze = freeze_mode.map(|f| match f {
                FreezeArg::FreezeCore => FreezeMode::FreezeCore,
                FreezeArg::RetrainAll => FreezeMode::RetrainAll,
            });
            commands::cmd_train_adaptive(&cfg, mode, freeze)
        }
        Command::Export { bundle, level, out } => commands::cmd_export(&bundle, &level, &out),
        Command::Simulate {
            bundle,
            level,
            transport,
            role,
            port,
            limit,
            comparison,
            out,
        } => commands::cmd_simulate(&SimulateArgs {
            bundle_dir: bundle,
            level,
            transport,
            role,
            port,
            limit,
            comparison: comparison.map(|c| match c {
                ComparisonArg::SignBit => ComparisonMode::SignBit,
                ComparisonArg::OtPriced => ComparisonMode::OtPriced,
            }),
            out_dir: out,
        }),
        Command::CostReport {
            config,
            bundle,
            out,
        } => commands::cmd_cost_report(config.as_deref(), bundle.as_deref(), out.as_deref()),
        Command::VerifyBundle { bundle } => commands::cmd_verify_bundle(&bundle),
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Training(_) => 3,
        Error::Transport(_) => 5,
        Error::Io(_) | Error::Json(_) => 6,
        // protocol-layer failures: desync, bad shares, mask violations
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
