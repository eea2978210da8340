use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use bspde_lab::harness::{self, ExperimentConfig, Kind};
use clap::{Args, Parser, Subcommand};

/// Binomial-tree lab for the backward stochastic heat equation.
#[derive(Parser)]
#[command(name = "bspde-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the linear equation and report norms and residuals.
    Solve(RunArgs),
    /// Martingale law of the discrete stochastic integral.
    ItoCheck(RunArgs),
    /// Energy, L^p and sup-norm estimates.
    Estimates(RunArgs),
    /// Null-control synthesis and its studies.
    Control(RunArgs),
    /// Picard iteration for the semilinear equation.
    Semilinear(RunArgs),
    /// Order of the Itô residual under refinement.
    Convergence(RunArgs),
    /// Properties of the analytic toolkit.
    ToolkitProps(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the parallel solver.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Command {
    fn split(self) -> (Kind, RunArgs) {
        match self {
            Command::Solve(a) => (Kind::Solve, a),
            Command::ItoCheck(a) => (Kind::ItoCheck, a),
            Command::Estimates(a) => (Kind::Estimates, a),
            Command::Control(a) => (Kind::Control, a),
            Command::Semilinear(a) => (Kind::Semilinear, a),
            Command::Convergence(a) => (Kind::Convergence, a),
            Command::ToolkitProps(a) => (Kind::ToolkitProps, a),
        }
    }
}

fn execute(kind: Kind, args: RunArgs) -> bspde_lab::Result<bool> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(kind),
    };
    match config.kind {
        Some(k) if k != kind => {
            return Err(bspde_lab::Error::Config(format!("config is for `{k}` but the `{kind}` subcommand was used")));
        }
        _ => config.kind = Some(kind),
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .map_err(|e| bspde_lab::Error::Config(format!("--jobs: {e}")))?;
    }
    let outcome = harness::run(&config, &args.out)?;
    // A closed pipe must not turn a finished run into a crash.
    let mut stdout = std::io::stdout().lock();
    let _ = write!(stdout, "{}", harness::format_checks(&outcome.checks));
    let _ = writeln!(stdout, "verdict: {}", if outcome.passed { "pass" } else { "fail" });
    Ok(outcome.passed)
}

fn main() -> ExitCode {
    let (kind, args) = Cli::parse().command.split();
    match execute(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
