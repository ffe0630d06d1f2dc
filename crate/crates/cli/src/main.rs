//! `chemkan` command-line driver.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 numerical
//! failure (divergence, non-finite values, step limits).

use std::path::PathBuf;
use std::process::ExitCode;

use chemkan::experiment::{run, ExperimentConfig, ExperimentKind};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "chemkan", version, about = "Train and evaluate ChemKAN surrogates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test datasets with manifests.
    Generate(Common),
    /// Train a ChemKAN (stage 1, then stage 2 when temperature evolves).
    Train(Common),
    /// Per-trajectory errors and predictions of a checkpoint.
    Evaluate(Common),
    /// Model-size ladders for ChemKAN and DeepONet with slope fits.
    Sweep(Common),
    /// Paired ChemKAN and DeepONet training across noise levels.
    NoiseStudy(Common),
    /// Ignition delays of data and, with a checkpoint, predictions.
    Ignition(Common),
    /// Right-hand-side cost and step counts against the reference mechanism.
    Bench(Common),
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set training.stage1_epochs=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory [default: $CHEMKAN_OUT/<command>].
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Model checkpoint for evaluate, ignition and bench.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Log progress.
    #[arg(short, long)]
    verbose: bool,
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Command::Generate(c) => (ExperimentKind::Generate, c),
            Command::Train(c) => (ExperimentKind::Train, c),
            Command::Evaluate(c) => (ExperimentKind::Evaluate, c),
            Command::Sweep(c) => (ExperimentKind::Sweep, c),
            Command::NoiseStudy(c) => (ExperimentKind::NoiseStudy, c),
            Command::Ignition(c) => (ExperimentKind::Ignition, c),
            Command::Bench(c) => (ExperimentKind::Bench, c),
        }
    }
}

/// TOML literal string, so backslashes in paths survive.
fn toml_string(p: &std::path::Path) -> String {
    format!("'{}'", p.to_string_lossy())
}

fn config(kind: ExperimentKind, c: &Common) -> chemkan::Result<ExperimentConfig> {
    let mut overrides = c.overrides.clone();
    if let Some(o) = &c.out {
        overrides.push(format!("output_dir={}", toml_string(o)));
    }
    if let Some(ck) = &c.checkpoint {
        overrides.push(format!("checkpoint={}", toml_string(ck)));
    }
    match &c.config {
        Some(p) => ExperimentConfig::load(p, Some(kind), &overrides),
        None => ExperimentConfig::from_toml("", Some(kind), &overrides),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let (kind, common) = cli.command.split();
    env_logger::Builder::new()
        .filter_level(if common.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .parse_default_env()
        .init();
    let result = config(kind, &common).and_then(|cfg| run(&cfg));
    match result {
        Ok(out) => {
            println!("{} -> {}", kind.name(), out.output_dir.display());
            for f in out.files {
                println!("  {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if kind == ExperimentKind::Train && e.is_numerical() {
                eprintln!("hint: lower training.lr or tighten the integrator tolerances");
            }
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
