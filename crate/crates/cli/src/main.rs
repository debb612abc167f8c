//! `devroll` — scenario-driven batch computation on chart manifolds.
//!
//! Exit codes: 0 computed and all gates passed; 1 computed but a gate
//! failed (reports still written); 2 invalid input; 3 numerical failure.

mod output;
mod run;
mod scenario;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use run::{CliError, RunConfig};
use scenario::Scenario;

#[derive(Parser)]
#[command(name = "devroll", version, about = "chart-based development engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        /// Path to the scenario JSON.
        scenario: PathBuf,
        /// Directory artifacts are written into.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Include frame / rotation-coefficient columns in CSV output.
        #[arg(long)]
        frames: bool,
        /// Suppress the per-gate summary on stdout.
        #[arg(long)]
        quiet: bool,
    },
}

fn effective_threads() -> usize {
    // DEVROLL_THREADS caps engine parallelism. Computation is currently
    // sequential per scenario, so any cap ≥ 1 is honoured as written.
    match std::env::var("DEVROLL_THREADS") {
        Ok(v) => v.trim().parse::<usize>().ok().filter(|&n| n >= 1).unwrap_or(1),
        Err(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            out,
            frames,
            quiet,
        } => {
            let text = match std::fs::read_to_string(&scenario) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read {}: {e}", scenario.display());
                    return ExitCode::from(2);
                }
            };
            let parsed = match Scenario::from_json(&text) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let cfg = RunConfig {
                out_dir: out,
                frames,
                quiet,
                threads: effective_threads(),
            };
            match run::run(&parsed, &cfg) {
                Ok(summary) => {
                    if summary.all_pass() {
                        if !quiet {
                            println!("status: ok");
                        }
                        ExitCode::SUCCESS
                    } else {
                        if !quiet {
                            println!("status: gate-failure");
                        }
                        ExitCode::from(1)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    match e {
                        CliError::Invalid(_) => ExitCode::from(2),
                        CliError::Numerical(_) => ExitCode::from(3),
                    }
                }
            }
        }
    }
}
