use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use plastibite_cli::commands::{self, SteadyOutcome};
use plastibite_cli::config;
use plastibite_cli::CliError;

/// Age- and biting-time-structured mosquito population engine.
///
/// Exit codes: 0 success, 1 validation or input error, 2 numerical failure.
#[derive(Parser)]
#[command(name = "plastibite", version, about)]
struct Cli {
    /// Run configuration file (INI-style sections).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,

    /// Half-width of the "lambda0 = 0" classification band (overrides the
    /// config).
    #[arg(long = "tol-zero", global = true, value_name = "FLOAT")]
    tol_zero: Option<f64>,

    /// Grid override: number of circle nodes and age cells.
    #[arg(long, global = true, num_args = 2, value_names = ["NX", "NA"])]
    grid: Option<Vec<usize>>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the growth bound and Perron profiles; writes spectral.json.
    Spectral,
    /// Run the lockstep solver; writes trajectory.csv and snapshot CSVs.
    Simulate,
    /// Classify the regime and construct the steady state when critical;
    /// writes steady_profile.csv and certificate.json, or regime.json.
    Steady,
    /// Evaluate the configured parameter grid; writes per-point JSON and the
    /// sweep.csv index.
    Sweep,
    /// Render a snapshot CSV as an SVG heatmap.
    Render {
        /// Snapshot CSV produced by simulate or steady.
        #[arg(long, value_name = "PATH")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    init_thread_pool();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

/// PLASTIBITE_THREADS caps the worker count; unset leaves the default pool.
fn init_thread_pool() {
    let Ok(raw) = std::env::var("PLASTIBITE_THREADS") else {
        return;
    };
    match raw.parse::<usize>() {
        Ok(n) if n >= 1 => {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        _ => eprintln!("warning: ignoring PLASTIBITE_THREADS = {raw:?}; expected a positive integer"),
    }
}

fn dispatch(cli: &Cli) -> plastibite_cli::Result<()> {
    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config <PATH> is required".to_string()))?;
    let mut run = config::parse_config(config_path)?;
    if let Some(grid) = &cli.grid {
        run.override_grid(grid[0], grid[1])?;
    }
    if let Some(tol) = cli.tol_zero {
        run.override_tol_zero(tol)?;
    }
    for warning in &run.warnings {
        eprintln!("warning: {warning}");
    }

    match &cli.command {
        Command::Spectral => {
            let doc = commands::cmd_spectral(&run, &cli.out)?;
            println!(
                "lambda0 = {:.16e} ({}), gap estimate {:.6e}",
                doc.result.lambda0, doc.regime, doc.result.gap_epsilon
            );
        }
        Command::Simulate => {
            let summary = commands::cmd_simulate(&run, &cli.out)?;
            println!(
                "simulated to t = {:.6e}; final l2 norm {:.6e}; {} snapshots",
                summary.final_time,
                summary.final_l2,
                summary.snapshot_paths.len()
            );
        }
        Command::Steady => match commands::cmd_steady(&run, &cli.out)? {
            SteadyOutcome::Certificate(cert) => println!(
                "critical steady state: rho0 = {:.6e}, residual = {:.3e}, drift = {:.3e}",
                cert.rho0, cert.residual, cert.drift
            ),
            SteadyOutcome::Report(report) => println!(
                "{} (lambda0 = {:.6e}): {}",
                report.regime, report.lambda0, report.statement
            ),
        },
        Command::Sweep => {
            let rows = commands::cmd_sweep(&run, &cli.out)?;
            println!("swept {} points", rows.len());
        }
        Command::Render { input } => {
            let path = commands::cmd_render(&run, input, &cli.out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}
