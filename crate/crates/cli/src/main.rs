//! Pipeline driver: each subcommand runs one stage, reads its upstream
//! artifacts (hash-verified against the producing stage's manifest), writes
//! its own artifacts plus a manifest, and exits with a class-specific code.

mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use perturbench_core::error::ErrorClass;

#[derive(Parser)]
#[command(
    name = "perturbench",
    version,
    about = "Train, attack, and evaluate randomized defenses for small dense classifiers"
)]
struct Cli {
    /// Experiment plan (TOML).
    #[arg(long, global = true, default_value = "plan.toml")]
    config: PathBuf,

    /// Overrides the plan's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Directory artifacts are read from and written to.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset and train the base classifier.
    Train,
    /// Keep only the inputs the base classifier gets right.
    Curate,
    /// Run every configured attack against the curated set.
    Attack,
    /// Estimate efficacy and quality across the defense grids.
    Sweep,
    /// Measure robustness across fleet sizes for the selected settings.
    Robustness,
    /// Render the settings table, grid heatmap data, and robustness curves.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("error: could not size the worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    let stage = match stages::Stage::load(&cli.config, cli.seed, &cli.out_dir) {
        Ok(stage) => stage,
        Err(e) => return fail(e),
    };
    let result = match cli.command {
        Command::Train => stage.train(),
        Command::Curate => stage.curate(),
        Command::Attack => stage.attack(),
        Command::Sweep => stage.sweep(),
        Command::Robustness => stage.robustness(),
        Command::Report => stage.report(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

fn fail(err: perturbench_core::Error) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(match err.class() {
        ErrorClass::Config => 2,
        ErrorClass::Dependency => 3,
        ErrorClass::Contract => 4,
        ErrorClass::Runtime => 1,
    })
}
