//! Experiment runner CLI: `run` a config sweep, `compare` a report against a
//! golden CSV, `list-problems`.
//!
//! Exit codes: 0 success, 1 comparison or runtime failure, 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use molgec::experiment::{compare_to_golden, run_experiment, CompareTolerances, ExperimentConfig};
use molgec::problem::BenchmarkId;

#[derive(Parser)]
#[command(name = "molgec", version, about = "Global-error-controlled 1D parabolic PDE solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (GTol, N0) cell of a config file and write CSV reports.
    Run { config: PathBuf },
    /// Compare a report CSV against a golden CSV under the standard tolerances.
    Compare { report: PathBuf, golden: PathBuf },
    /// List the built-in benchmark problems.
    ListProblems,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let cfg = match ExperimentConfig::parse_file(&config) {
                Ok(cfg) => cfg,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            match run_experiment(&cfg) {
                Ok(paths) => {
                    for p in &paths {
                        println!("wrote {}", p.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::Compare { report, golden } => {
            let read = |p: &PathBuf| std::fs::read_to_string(p);
            let (r, g) = match (read(&report), read(&golden)) {
                (Ok(r), Ok(g)) => (r, g),
                (Err(e), _) | (_, Err(e)) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            match compare_to_golden(&r, &g, &CompareTolerances::default()) {
                Ok(outcome) if outcome.passed() => {
                    println!("PASS: {} matches {}", report.display(), golden.display());
                    ExitCode::SUCCESS
                }
                Ok(outcome) => {
                    for f in &outcome.failures {
                        println!("FAIL: {f}");
                    }
                    ExitCode::from(1)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Command::ListProblems => {
            for name in BenchmarkId::ALL_NAMES {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
    }
}
