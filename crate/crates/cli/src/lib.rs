//! Scenario-driven harness around `simplexflow`: parse a JSON scenario, run
//! its analyses, write CSV/JSON artifacts and a pass/fail report.

pub mod error;
pub mod run;
pub mod scenario;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use error::{CliError, EXIT_INPUT, EXIT_NUMERIC, EXIT_VERIFICATION};
pub use run::{run_scenario, Check, Report, RunOptions};
pub use scenario::{parse_scenario, Analysis, Scenario, FORMAT_VERSION};

pub fn load_scenario(path: &Path) -> Result<Scenario, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_scenario(&text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub file: String,
    pub name: Option<String>,
    pub exit_code: i32,
    pub error: Option<String>,
    pub failed_checks: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub passed: bool,
    pub scenarios: Vec<SuiteEntry>,
}

impl SuiteReport {
    /// The largest exit code among the scenarios.
    pub fn exit_code(&self) -> i32 {
        self.scenarios.iter().map(|s| s.exit_code).max().unwrap_or(0)
    }
}

/// Runs every `*.json` file of `dir` in name order, each into its own
/// subdirectory of the output directory, and writes `suite_report.json`.
pub fn run_suite(dir: &Path, opts: &RunOptions) -> Result<SuiteReport, CliError> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let base = opts.output.clone().unwrap_or_else(|| "out".into());
    let mut scenarios = Vec::new();
    for file in files {
        let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let mut entry = SuiteEntry {
            file: file.display().to_string(),
            name: None,
            exit_code: 0,
            error: None,
            failed_checks: Vec::new(),
        };
        let outcome = load_scenario(&file).and_then(|s| {
            entry.name = Some(s.name.clone());
            let o = RunOptions {
                output: Some(base.join(&stem)),
                ..opts.clone()
            };
            run_scenario(&s, &o)
        });
        match outcome {
            Ok(report) => {
                entry.exit_code = report.exit_code();
                entry.failed_checks = report
                    .checks()
                    .filter(|(_, c)| !c.passed)
                    .map(|(a, c)| format!("{}:{}", a.kind, c.name))
                    .collect();
            }
            Err(e) => {
                entry.exit_code = e.exit_code();
                entry.error = Some(e.to_string());
            }
        }
        scenarios.push(entry);
    }
    let report = SuiteReport {
        passed: scenarios.iter().all(|s| s.exit_code == 0),
        scenarios,
    };
    fs::create_dir_all(&base).map_err(|e| CliError::io(&base, e))?;
    let path = base.join("suite_report.json");
    fs::write(&path, serde_json::to_string_pretty(&report).expect("reports serialize"))
        .map_err(|e| CliError::io(&path, e))?;
    Ok(report)
}
