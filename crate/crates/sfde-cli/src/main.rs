use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sfde_cli::{config, runner, CliError, ExperimentKind};

/// Numerical lab for stochastic delay reaction-diffusion equations.
#[derive(Parser)]
#[command(name = "sfde", version, about)]
struct Cli {
    #[command(subcommand)]
    kind: KindCommand,
}

#[derive(Subcommand)]
enum KindCommand {
    /// Run trajectories / ensembles and record norm and mode statistics.
    Simulate(RunArgs),
    /// Frozen-noise Picard iteration with stepper cross-check.
    Picard(RunArgs),
    /// Successive approximations toward the stationary solution.
    Stationary(RunArgs),
    /// Shared-noise pair decay fit of the exponential attractivity rate.
    Attractivity(RunArgs),
    /// Ensemble observable comparison between T and 2T.
    Invariant(RunArgs),
    /// Transition-law comparison across start offsets.
    Homogeneity(RunArgs),
    /// Kernel, smoothing, semigroup, and Hilbert-Schmidt estimates.
    KernelCheck(RunArgs),
    /// Smallness-condition calculator.
    Smallness(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// Path to the JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: config output_dir or ./sfde_out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for ensemble loops (results do not depend on it).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match &cli.kind {
        KindCommand::Simulate(a) => (ExperimentKind::Simulate, a),
        KindCommand::Picard(a) => (ExperimentKind::Picard, a),
        KindCommand::Stationary(a) => (ExperimentKind::Stationary, a),
        KindCommand::Attractivity(a) => (ExperimentKind::Attractivity, a),
        KindCommand::Invariant(a) => (ExperimentKind::Invariant, a),
        KindCommand::Homogeneity(a) => (ExperimentKind::Homogeneity, a),
        KindCommand::KernelCheck(a) => (ExperimentKind::KernelCheck, a),
        KindCommand::Smallness(a) => (ExperimentKind::Smallness, a),
    };
    match run(kind, args) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            println!("artifacts: {}", outcome.out_dir.display());
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                eprintln!(
                    "check failed: {}",
                    outcome.failing_check.as_deref().unwrap_or("unnamed")
                );
                ExitCode::from(4)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(kind: ExperimentKind, args: &RunArgs) -> Result<runner::RunOutcome, CliError> {
    let parsed = config::parse_config(&args.config)?;
    let validated = config::validate(parsed, Some(kind))?;
    let seed = args.seed.unwrap_or(validated.config.seed);
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| runner::default_out_dir(&validated));
    runner::run_experiment(&validated, seed, &out_dir, args.threads)
}
