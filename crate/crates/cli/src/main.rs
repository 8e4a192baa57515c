//! `gasguard` — three-stage misuse detector for gas-pipeline SCADA records.
//!
//! The pipeline is a sequence of explicit verbs so every intermediate
//! artifact (synthetic data, imputed data, splits, models, reports) lands
//! on disk with a manifest: `synth` → `impute` → `split` → `train` →
//! `eval` → `report`. Each command is deterministic given its inputs and
//! seeds; see `config.rs` for how seeds derive from the master `--seed`.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::{FormatArg, SemanticsArg, Settings};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "gasguard",
    version,
    about = "Three-stage misuse detection and identification for gas-pipeline SCADA records"
)]
struct Cli {
    /// Pipeline config file (versioned TOML).
    #[arg(long, global = true, value_name = "TOML")]
    config: Option<PathBuf>,

    /// Master seed; per-command seeds derive from it by fixed offsets
    /// unless the config pins them.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Output directory (overrides GASGUARD_OUT and the config's `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Output rendering for `eval` and `report`.
    #[arg(long, global = true, value_enum, value_name = "FORMAT")]
    format: Option<FormatArg>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled synthetic dataset from a generation spec.
    Synth {
        /// Synthesis spec (versioned TOML: seed, per-subclass counts or a
        /// corpus scale divisor, missing rates, band options).
        #[arg(long, value_name = "TOML")]
        spec: PathBuf,
    },
    /// Fill missing payload cells by chained-equations imputation.
    Impute {
        /// Input dataset CSV (defaults to the config's `dataset`).
        #[arg(long, value_name = "CSV")]
        input: Option<PathBuf>,
    },
    /// Build three stratified splits and the derived train/test folds.
    Split {
        /// Input dataset CSV (defaults to the config's `dataset`).
        #[arg(long, value_name = "CSV")]
        input: Option<PathBuf>,
    },
    /// Train the three-stage cascade on one fold's training view.
    Train {
        /// Complete (imputed) dataset CSV (defaults to the config's `dataset`).
        #[arg(long, value_name = "CSV")]
        data: Option<PathBuf>,
        /// Fold manifest written by `split` (fold0.json, fold1.json, ...).
        #[arg(long, value_name = "JSON")]
        fold: PathBuf,
    },
    /// Evaluate a trained cascade on one fold's test view.
    Eval {
        /// Model directory written by `train`.
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// Complete (imputed) dataset CSV (defaults to the config's `dataset`).
        #[arg(long, value_name = "CSV")]
        data: Option<PathBuf>,
        /// Fold manifest written by `split`.
        #[arg(long, value_name = "JSON")]
        fold: PathBuf,
        /// Which evaluation(s) to run: per-stage with ground-truth
        /// routing, the composed 36-label pipeline, or both.
        #[arg(long, value_enum, value_name = "WHICH")]
        semantics: Option<SemanticsArg>,
    },
    /// Pretty-print a stored evaluation report.
    Report {
        /// Report JSON written by `eval`.
        #[arg(long, value_name = "JSON")]
        input: PathBuf,
    },
}

fn main() -> std::process::ExitCode {
    match run() {
        Ok(()) => std::process::ExitCode::SUCCESS,
        // A downstream consumer (e.g. `| head`) closing stdout early is
        // not a pipeline failure.
        Err(err) if is_broken_pipe(&err) => std::process::ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("Error: {err:?}");
            std::process::ExitCode::FAILURE
        }
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|cause| {
        cause
            .downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let settings = Settings::resolve(cli.config.as_deref(), cli.seed)?;
    match cli.command {
        Command::Synth { spec } => commands::cmd_synth(&settings, &spec, cli.out, cli.seed),
        Command::Impute { input } => commands::cmd_impute(&settings, input, cli.out),
        Command::Split { input } => commands::cmd_split(&settings, input, cli.out),
        Command::Train { data, fold } => commands::cmd_train(&settings, data, &fold, cli.out),
        Command::Eval { model, data, fold, semantics } => {
            commands::cmd_eval(&settings, &model, data, &fold, cli.out, semantics, cli.format)
        }
        Command::Report { input } => commands::cmd_report(&settings, &input, cli.format),
    }
}
