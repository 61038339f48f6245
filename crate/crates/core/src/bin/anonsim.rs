//! Command-line front end. Exit status: 0 when every selected check
//! passed, 1 when a check failed, 2 on configuration, usage or I/O errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anonsim::config::parse_config;
use anonsim::runner::{regenerate_summary, resolve_output_dir, run_suites, selected_suites, RunReport, Suite};

#[derive(Parser)]
#[command(name = "anonsim", version, about = "Leakage bounds, estimators and threat simulation for identity-decoupled anonymization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the configuration and the environment.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check every bound numerically.
    Verify(RunArgs),
    /// Run the three-tier attacker sweep.
    Threat(RunArgs),
    /// Optimize the encoder and run the ablations.
    Optimize(RunArgs),
    /// Check the mutual-information estimators.
    Estimate(RunArgs),
    /// Calibrate the sampler thresholds and measure first-draw acceptance.
    Calibrate(RunArgs),
    /// Run every suite enabled in the configuration.
    Run(RunArgs),
    /// Re-render the summary from stored CSVs.
    Report {
        /// Output directory of an earlier run.
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn run(args: &RunArgs, suites: Option<&[Suite]>) -> Result<RunReport, anonsim::Error> {
    let cfg = parse_config(&args.config)?;
    let out = args.out.clone().unwrap_or_else(|| resolve_output_dir(&cfg));
    let selected = suites.map(<[Suite]>::to_vec).unwrap_or_else(|| selected_suites(&cfg));
    run_suites(&cfg, &selected, &out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let (args, suite) = match &cli.command {
        Command::Verify(a) => (a, Some(Suite::Verify)),
        Command::Threat(a) => (a, Some(Suite::Threat)),
        Command::Optimize(a) => (a, Some(Suite::Optimize)),
        Command::Estimate(a) => (a, Some(Suite::Estimate)),
        Command::Calibrate(a) => (a, Some(Suite::Calibrate)),
        Command::Run(a) => (a, None),
        Command::Report { input } => {
            return match regenerate_summary(input) {
                Ok((text, passed)) => {
                    print!("{text}");
                    ExitCode::from(if passed { 0 } else { 1 })
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(2)
                }
            };
        }
    };
    let suites = suite.map(|s| [s]);
    match run(args, suites.as_ref().map(|s| s.as_slice())) {
        Ok(report) => {
            for s in &report.suites {
                let status = if s.passed { "PASS" } else { "FAIL" };
                eprintln!("{} {status} in {:.1}s", s.suite.name(), s.seconds);
                if let Some(err) = &s.error {
                    eprintln!("  error: {err}");
                }
                for c in s.checks.iter().filter(|c| !c.passed) {
                    eprintln!("  failed: {} value={} threshold={}", c.name, c.value, c.threshold);
                }
            }
            eprintln!("outputs in {}", report.output_dir.display());
            ExitCode::from(report.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
