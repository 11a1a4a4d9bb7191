//! `sdsra` command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error, 3 a verification
//! suite reported a failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sdsra::harness::{self, RunConfig};

#[derive(Parser)]
#[command(
    name = "sdsra",
    version,
    about = "SDSRA and SAC experiments, checks and tabular verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config; writes CSV logs, checkpoints and an SVG.
    Train { config: PathBuf },
    /// Train two configs on the same env and compare them.
    Compare { config_a: PathBuf, config_b: PathBuf },
    /// Evaluate a saved checkpoint directory.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
        /// Seed of the evaluation start states (defaults to the first config seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Soft policy iteration properties on random MDPs.
    TabularVerify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
    /// Finite-difference checks of every analytic gradient.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        cases: usize,
    },
}

enum Failure {
    Usage(String),
    Runtime(sdsra::Error),
    Verification,
}

impl From<sdsra::Error> for Failure {
    fn from(e: sdsra::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn load_config(path: &Path) -> Result<RunConfig, Failure> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let (mut config, _) =
        harness::parse_config(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if let Some(dir) = std::env::var_os("SDSRA_OUT") {
        config.output_dir = PathBuf::from(dir);
    }
    Ok(config)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Train { config } => {
            let config = load_config(&config)?;
            let report = harness::run_train(&config, &config.output_dir)?;
            for r in &report.runs {
                let last = r.log.evals.last().map(|e| format!("{:.2}", e.mean_return));
                println!(
                    "{} seed {}: {} log rows, final eval return {}, csv {}",
                    report.label,
                    r.seed,
                    r.log.records.len(),
                    last.as_deref().unwrap_or("n/a"),
                    r.csv.display()
                );
            }
            println!("svg {}", report.svg.display());
        }
        Command::Compare { config_a, config_b } => {
            let a = load_config(&config_a)?;
            let b = load_config(&config_b)?;
            let report = harness::run_compare(&a, &b, &a.output_dir)?;
            print!("{report}");
            if let Some(svg) = &report.svg {
                println!("svg {}", svg.display());
            }
        }
        Command::Eval {
            checkpoint,
            config,
            seed,
        } => {
            let config = load_config(&config)?;
            let seed = seed.unwrap_or(config.seeds[0]);
            let eval = harness::run_eval(&checkpoint, &config, seed)?;
            println!(
                "{} episodes: mean return {:.4}, mean entropy {:.4}",
                eval.returns.len(),
                eval.mean_return,
                eval.mean_entropy
            );
        }
        Command::TabularVerify { seed, cases } => {
            let report = harness::tabular_suite(seed, cases)?;
            println!("{report}");
            if !report.all_passed() {
                return Err(Failure::Verification);
            }
        }
        Command::Gradcheck { seed, cases } => {
            let report = harness::gradcheck_suite(seed, cases)?;
            println!("{report}");
            if !report.all_passed() {
                return Err(Failure::Verification);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Verification) => ExitCode::from(3),
    }
}
