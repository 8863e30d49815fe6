//! `rsgm` — config-driven experiment runner.
//!
//! Subcommands mirror the experiment kinds: `exit-prob`, `tv-sweep`,
//! `sample`, and `validate-kernels`. Progress goes to stderr, data only to
//! the output files. Exit status: 0 on success, 1 on config errors, 2 when a
//! validation check fails.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use rsgm::config::{ExperimentConfig, ExperimentKind};
use rsgm::experiments::run_experiment;

#[derive(Parser)]
#[command(name = "rsgm", version, about = "Riemannian score-based sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reset-probability sweep over step sizes (one output per manifold).
    ExitProb(RunArgs),
    /// Total-variation sweep over reverse step counts on the torus.
    TvSweep(RunArgs),
    /// Draw reverse trajectories and dump their terminal records.
    Sample(RunArgs),
    /// Check the exact kernels against Gaussian bounds and conservation laws.
    ValidateKernels(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output path from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads: a number or "auto".
    #[arg(long, default_value = "auto")]
    threads: String,
    /// Also write each CSV as a JSON array of row objects.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (expected, args) = match cli.command {
        Command::ExitProb(a) => (ExperimentKind::ExitProb, a),
        Command::TvSweep(a) => (ExperimentKind::TvSweep, a),
        Command::Sample(a) => (ExperimentKind::Sample, a),
        Command::ValidateKernels(a) => (ExperimentKind::ValidateKernels, a),
    };
    match run(expected, args) {
        Ok(failures) if failures == 0 => ExitCode::SUCCESS,
        Ok(failures) => {
            eprintln!("rsgm: {failures} validation check(s) failed");
            ExitCode::from(2)
        }
        Err(message) => {
            eprintln!("rsgm: {message}");
            ExitCode::from(1)
        }
    }
}

fn run(expected: ExperimentKind, args: RunArgs) -> Result<usize, String> {
    configure_threads(&args.threads)?;
    let mut config = ExperimentConfig::load(&args.config)
        .map_err(|e| format!("{}: {e}", args.config.display()))?;
    if config.experiment != expected {
        return Err(format!(
            "config declares experiment '{}' but the '{}' subcommand was invoked",
            config.experiment.name(),
            expected.name()
        ));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = args.out {
        config.output = out.display().to_string();
    }
    eprintln!(
        "running {} (seed {}) -> {}",
        config.experiment.name(),
        config.seed,
        config.output
    );
    let outcome = run_experiment(&config, args.json).map_err(|e| e.to_string())?;
    for file in &outcome.files {
        eprintln!("wrote {}", file.display());
    }
    Ok(outcome.validation_failures)
}

fn configure_threads(threads: &str) -> Result<(), String> {
    if threads == "auto" {
        return Ok(());
    }
    let n: usize = threads
        .parse()
        .map_err(|_| format!("--threads expects a number or 'auto', got '{threads}'"))?;
    if n == 0 {
        return Err("--threads must be at least 1".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}
