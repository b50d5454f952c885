//! Scenario-driven front end. Each subcommand loads a JSON scenario, runs
//! one pipeline and writes reproducible artifacts (summary JSON, CSV tables,
//! PGM masks) into the output directory.
//!
//! Exit codes: 0 success, 1 usage/config error, 2 verification failure.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use waveobs::pipeline;
use waveobs::scenario::Scenario;

#[derive(Parser)]
#[command(name = "waveobs", version, about = "observation regions, Carleman identity checks and observability constants for wave equations")]
struct Cli {
    /// Scenario configuration (JSON)
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,

    /// Output directory for artifacts
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override the scenario seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Geometry exports and inclusion-chain verdicts
    Regions,
    /// Pointwise identity residual report
    Identity {
        /// Random points per test-function family
        #[arg(long, default_value_t = 1000)]
        points: usize,
    },
    /// Spectral threshold sweep over a lambda grid
    Sweep,
    /// Gramian reports and region comparison
    Observe,
    /// Energy-bound fits over free waves and random coefficient draws
    Energy {
        #[arg(long, default_value_t = 10)]
        draws: usize,
    },
}

fn load_scenario(cli: &Cli) -> anyhow::Result<Scenario> {
    let path = cli
        .scenario
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("--scenario <path> is required"))?;
    let mut sc = Scenario::from_path(path)
        .map_err(|e| anyhow::anyhow!("loading {}: {e}", path.display()))?;
    if let Some(seed) = cli.seed {
        sc.seed = seed;
    }
    Ok(sc)
}

fn run(cli: &Cli) -> anyhow::Result<bool> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    let sc = load_scenario(cli)?;
    let out = Some(cli.out.as_path());
    let passed = match cli.command {
        Command::Regions => {
            let rep = pipeline::run_regions(&sc, out)?;
            println!(
                "regions: T* = {:.6}, T = {:.6}, measure(K)/measure(K1) = {:.4}, chain {}",
                rep.scales.tstar,
                rep.t_horizon,
                rep.measure_ratio_k_over_k1,
                rep.chain
                    .as_ref()
                    .map_or("skipped".to_string(), |c| if c.ok() {
                        "ok".into()
                    } else {
                        "BROKEN".into()
                    }),
            );
            rep.passed
        }
        Command::Identity { points } => {
            let rep = pipeline::run_identity(&sc, points, out)?;
            for row in &rep.rows {
                println!(
                    "identity[{}]: {} points, max relative residual {:.3e}",
                    row.family, row.points, row.max_relative_residual
                );
            }
            rep.passed
        }
        Command::Sweep => {
            let rep = pipeline::run_sweep(&sc, out)?;
            for (name, r) in &rep.reports {
                println!(
                    "sweep[{name}]: lambda0 = {:?} over {} samples",
                    r.lambda0, rep.sample_count
                );
            }
            rep.passed
        }
        Command::Observe => {
            let rep = pipeline::run_observe(&sc, out)?;
            for row in &rep.rows {
                println!(
                    "observe[{}]: measure {:.5}, mu_min {:.6e}, C_obs {}",
                    row.name,
                    row.measure,
                    row.mu_min,
                    row.c_obs.map_or("inf".into(), |c| format!("{c:.4e}")),
                );
            }
            rep.passed
        }
        Command::Energy { draws } => {
            let rep = pipeline::run_energy(&sc, draws, out)?;
            println!(
                "energy: free fitted C = {:.4}, spread over draws = {:.3} (fit) / {:.3} (ratio)",
                rep.free_fitted_c, rep.fitted_c_spread, rep.ratio_spread
            );
            rep.passed
        }
    };
    Ok(passed)
}

/// Failures of a verified property exit 2; config and usage errors exit 1.
fn is_verification_failure(e: &anyhow::Error) -> bool {
    matches!(
        e.downcast_ref::<waveobs::Error>(),
        Some(
            waveobs::Error::NoFeasibleParameters { .. }
                | waveobs::Error::NoThreshold { .. }
                | waveobs::Error::Step2Bound { .. }
        )
    )
}

fn main() -> ExitCode {
    // usage errors exit 1 (clap's default of 2 is reserved for verification)
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("verification failed (see artifacts in {})", cli.out.display());
            ExitCode::from(2)
        }
        Err(e) if is_verification_failure(&e) => {
            eprintln!("verification failed: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
