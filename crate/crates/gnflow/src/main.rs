//! Command-line harness for damped Gauss-Newton flow experiments.
//!
//! Exit codes: 0 on success, 1 for config/data/runtime errors (including
//! malformed invocations), 2 when an invariant suite fails.

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

use gnflow::harness::check::{self, CheckLevel};
use gnflow::harness::{config, run};

#[derive(Parser)]
#[command(
    name = "gnflow",
    version,
    about = "Damped Gauss-Newton flow experiments: sweeps, spectral reports, invariant checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (alpha, rho) trajectory in the config and write artifacts.
    Run { config: PathBuf },
    /// Alias for `run`.
    Sweep { config: PathBuf },
    /// Print the initialization-time spectral report for the configured
    /// problem without integrating anything.
    Spectral { config: PathBuf },
    /// Run the numerical invariant suites.
    Check {
        #[arg(long, value_enum, default_value_t = CheckLevel::Quick)]
        level: CheckLevel,
    },
}

fn main() {
    env_logger::init();
    // Map usage errors to exit code 1 (config errors); clap's default of 2 is
    // reserved here for invariant-suite failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let code = match cli.command {
        Command::Run { config } | Command::Sweep { config } => cmd_run(&config),
        Command::Spectral { config } => cmd_spectral(&config),
        Command::Check { level } => cmd_check(level),
    };
    std::process::exit(code);
}

fn fail(e: gnflow::Error) -> i32 {
    eprintln!("error: {e}");
    e.exit_code()
}

fn cmd_run(path: &Path) -> i32 {
    let outcome = match config::load(path).and_then(|(cfg, text)| run::execute(&cfg, &text)) {
        Ok(outcome) => outcome,
        Err(e) => return fail(e),
    };
    for r in &outcome.summary.runs {
        match &r.error {
            Some(msg) => println!("alpha={} rho={}: FAILED: {msg}", r.alpha, r.rho),
            None => {
                let exit = r
                    .exit_time
                    .map_or("none".to_string(), |t| format!("{t}"));
                let rate = r
                    .fitted_rate
                    .map_or("n/a".to_string(), |v| format!("{v:.6}"));
                let verdicts = if r.verdicts.is_empty() {
                    "none".to_string()
                } else {
                    r.verdicts
                        .iter()
                        .map(|v| {
                            format!("{}={}", v.name, if v.held { "held" } else { "violated" })
                        })
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                println!(
                    "alpha={} rho={}: final_loss={:e} exit={exit} fitted_rate={rate} {verdicts}",
                    r.alpha,
                    r.rho,
                    r.final_loss.unwrap_or(f64::NAN),
                );
            }
        }
    }
    println!("summary: {}", outcome.summary_path.display());
    0
}

fn cmd_spectral(path: &Path) -> i32 {
    let report = match config::load(path).and_then(|(cfg, _)| run::spectral_summary(&cfg)) {
        Ok(report) => report,
        Err(e) => return fail(e),
    };
    match toml::to_string_pretty(&report) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => fail(gnflow::Error::Data(format!(
            "cannot serialize spectral report: {e}"
        ))),
    }
}

fn cmd_check(level: CheckLevel) -> i32 {
    let outcomes = check::run_checks(level);
    for o in &outcomes {
        println!(
            "{} {} ({} cases, {}) [{} ms]",
            if o.passed { "PASS" } else { "FAIL" },
            o.name,
            o.cases,
            o.detail,
            o.millis
        );
    }
    if check::all_passed(&outcomes) {
        println!("all {} suites passed", outcomes.len());
        0
    } else {
        eprintln!("invariant failure");
        2
    }
}
