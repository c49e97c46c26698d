//! Command-line front end. Each subcommand runs one experiment mode from a
//! TOML config and writes a resolved-config echo, a key/value summary, and
//! one CSV per result table into the run's output directory.
//!
//! Exit codes: 0 on success, 2 for invalid input (config, grid, gain,
//! parameters), 3 for I/O failures, 4 for numerical failures during a run.
//! Errors print as `error[<category>]: <message>` with a stable,
//! machine-readable category tag.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spinsqueeze::harness::config::{Mode, Resolved, SimulationConfig};
use spinsqueeze::harness::experiments;
use spinsqueeze::harness::output::ResultBundle;
use spinsqueeze::{Error, Result};

#[derive(Parser)]
#[command(
    name = "spinsqueeze",
    version,
    about = "Collective-spin squeezing under continuous measurement and feedback",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the deterministic feedback master equation for one spin.
    Me(MeArgs),
    /// Run a trajectory ensemble of the conditioned stochastic equation.
    Sme(SmeArgs),
    /// Scan the squeezing minimum across spins with the closed-form schedule.
    Sweep(CommonArgs),
    /// Rerun the sweep with a miscalibrated schedule and compare.
    Robustness(CommonArgs),
    /// Evaluate separation-of-scales margins for a cavity-QED parameter set.
    RegimeCheck(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the run's TOML config.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides the config's `[output] dir`).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for the trajectory/spin fan-out (default: all cores).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
}

#[derive(Args)]
struct MeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Keep a full state snapshot every N steps (overrides the config).
    #[arg(long, value_name = "N")]
    snapshot_stride: Option<usize>,
}

#[derive(Args)]
struct SmeArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Master seed for the ensemble's noise streams (overrides the config).
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
    /// Keep an averaged-state snapshot every N steps (overrides the config).
    #[arg(long, value_name = "N")]
    snapshot_stride: Option<usize>,
}

fn main() -> ExitCode {
    match run_cli() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run_cli() -> Result<()> {
    let cli = Cli::parse();
    let (common, seed, stride, want) = match &cli.command {
        Command::Me(a) => (&a.common, None, a.snapshot_stride, Mode::Me),
        Command::Sme(a) => (&a.common, a.seed, a.snapshot_stride, Mode::Sme),
        Command::Sweep(c) => (c, None, None, Mode::Sweep),
        Command::Robustness(c) => (c, None, None, Mode::Robustness),
        Command::RegimeCheck(c) => (c, None, None, Mode::RegimeCheck),
    };

    let mut config = SimulationConfig::from_path(&common.config)?;
    if config.mode != want {
        return Err(Error::Config {
            reason: format!(
                "config sets mode = \"{}\" but the \"{want}\" subcommand was invoked; \
                 run `spinsqueeze {}` instead",
                config.mode, config.mode
            ),
        });
    }
    config.apply_overrides(common.out.as_deref(), seed, stride);

    // Relative paths inside the config (gain tables) resolve against it.
    let base_dir = common.config.parent().unwrap_or(Path::new("."));
    let resolved = config.resolve(base_dir)?;
    let bundle = run_on_pool(common.threads, &resolved)?;

    for path in bundle.write()? {
        println!("wrote {}", path.display());
    }
    print!("{}", bundle.summary_text());
    Ok(())
}

/// Run the experiment, honoring --threads when the worker pool exists.
#[cfg(feature = "parallel")]
fn run_on_pool(threads: Option<usize>, resolved: &Resolved) -> Result<ResultBundle> {
    let Some(n) = threads else {
        return experiments::run(resolved);
    };
    if n == 0 {
        return Err(Error::InvalidParameter {
            reason: "--threads must be at least 1".into(),
        });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::InvalidParameter {
            reason: format!("could not build a {n}-thread pool: {e}"),
        })?;
    pool.install(|| experiments::run(resolved))
}

#[cfg(not(feature = "parallel"))]
fn run_on_pool(threads: Option<usize>, resolved: &Resolved) -> Result<ResultBundle> {
    if threads.is_some() {
        eprintln!("note: built without the `parallel` feature; --threads is ignored");
    }
    experiments::run(resolved)
}
