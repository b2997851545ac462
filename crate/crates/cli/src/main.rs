use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vrpg_cli::config::parse_config;
use vrpg_cli::runner::{run_experiment, Action, Overrides};

#[derive(Parser)]
#[command(
    name = "vrpg-bench",
    about = "Runs constrained stochastic optimization experiments from a config file"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Master seed override (wins over the config).
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Output directory (wins over the config and VRPG_BENCH_OUT).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Replication-parallel worker threads (0 = all cores).
    #[arg(long, value_name = "INT", default_value_t = 0)]
    jobs: usize,
    /// Suppress the summary table.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured solver over the n-grid; one CSV row per replication.
    Solve(Common),
    /// Estimate the scaled benchmark error at each grid point.
    BenchmarkDelta(Common),
    /// Verify the per-epoch contraction claim.
    VerifyLemma1(Common),
    /// Verify the tilted-solution Lipschitz claim (grid = recentering sizes).
    VerifyLipschitz(Common),
    /// Verify the end-to-end error bound.
    VerifyTheorem(Common),
    /// Benchmark plus all three verifiers over the same grid.
    Sweep(Common),
}

impl Command {
    fn split(self) -> (Action, Common) {
        match self {
            Self::Solve(c) => (Action::Solve, c),
            Self::BenchmarkDelta(c) => (Action::BenchmarkDelta, c),
            Self::VerifyLemma1(c) => (Action::VerifyLemma1, c),
            Self::VerifyLipschitz(c) => (Action::VerifyLipschitz, c),
            Self::VerifyTheorem(c) => (Action::VerifyTheorem, c),
            Self::Sweep(c) => (Action::Sweep, c),
        }
    }
}

#[cfg(feature = "parallel")]
fn configure_jobs(jobs: usize) {
    if jobs > 0 {
        // Thread count affects scheduling only; output order is fixed.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
}

#[cfg(not(feature = "parallel"))]
fn configure_jobs(_jobs: usize) {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (action, common) = cli.command.split();
    configure_jobs(common.jobs);

    let text = match std::fs::read_to_string(&common.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", common.config.display());
            return ExitCode::from(2);
        }
    };
    let config = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", common.config.display());
            return ExitCode::from(2);
        }
    };
    let overrides = Overrides {
        seed: common.seed,
        out: common.out,
        quiet: common.quiet,
    };
    match run_experiment(action, &config, &overrides) {
        Ok(outcome) if outcome.all_pass => ExitCode::SUCCESS,
        Ok(_) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
