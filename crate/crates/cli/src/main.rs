use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use simplexflow_cli::{load_scenario, run_scenario, run_suite, CliError, RunOptions};

/// Mean-field dynamics on the simplex, driven by scenario files.
#[derive(Parser)]
#[command(name = "simplexflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts and report.json.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Parse and validate a scenario without running it.
    Validate { scenario: PathBuf },
    /// Run every scenario in a directory.
    Suite {
        dir: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Replaces the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replaces sampling-based check sizes.
    #[arg(long)]
    samples: Option<usize>,
}

impl From<Overrides> for RunOptions {
    fn from(o: Overrides) -> Self {
        RunOptions {
            output: o.output,
            seed: o.seed,
            samples: o.samples,
        }
    }
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { scenario } => match load_scenario(&scenario) {
            Ok(s) => {
                println!("{}: valid ({} analyses)", s.name, s.analyses.len());
                ExitCode::SUCCESS
            }
            Err(e) => fail(e),
        },
        Command::Run { scenario, overrides } => {
            let result = load_scenario(&scenario).and_then(|s| run_scenario(&s, &overrides.into()));
            match result {
                Ok(report) => {
                    for (a, c) in report.checks() {
                        let mark = if c.passed { "PASS" } else { "FAIL" };
                        println!("{mark} {}:{} {}: {}", a.index, a.kind, c.name, c.detail);
                    }
                    ExitCode::from(report.exit_code() as u8)
                }
                Err(e) => fail(e),
            }
        }
        Command::Suite { dir, overrides } => match run_suite(&dir, &overrides.into()) {
            Ok(report) => {
                for s in &report.scenarios {
                    let status = if s.exit_code == 0 { "PASS" } else { "FAIL" };
                    println!("{status} {} (exit {})", s.file, s.exit_code);
                }
                ExitCode::from(report.exit_code() as u8)
            }
            Err(e) => fail(e),
        },
    }
}
