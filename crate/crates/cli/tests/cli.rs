use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use simplexflow_cli::{load_scenario, parse_scenario, CliError, EXIT_INPUT, EXIT_VERIFICATION};

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario_path(name: &str) -> PathBuf {
    repo_root().join("scenarios").join(name)
}

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simplexflow"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run(scenario: &Path, out: &Path) -> Output {
    bin(&["run", scenario.to_str().unwrap(), "--output", out.to_str().unwrap()])
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const MINIMAL: &str = r#"{
  "format_version": 1,
  "name": "minimal",
  "n": 2,
  "protocol": {
    "kind": "gibbs-direct",
    "target": { "kind": "gibbs", "baseline": [0.0, 0.5], "coupling": [[1.0, 0.0], [0.0, 1.0]], "beta": 1.0 }
  },
  "analyses": [{ "kind": "integrate", "x0": [0.9, 0.1], "t_end": 5.0 }]
}"#;

#[test]
fn minimal_scenario_parses() {
    let s = parse_scenario(MINIMAL).unwrap();
    assert_eq!(s.n, 2);
    assert_eq!(s.analyses.len(), 1);
    assert_eq!(s.seed, 0);
}

#[test]
fn oversized_payoff_is_an_input_error() {
    let text = MINIMAL.replace(
        r#""coupling": [[1.0, 0.0], [0.0, 1.0]]"#,
        r#""coupling": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]"#,
    );
    let err = parse_scenario(&text).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_INPUT);
    assert!(err.to_string().contains("protocol"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.json");
    fs::write(&file, text).unwrap();
    let out = bin(&["validate", file.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(EXIT_INPUT));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn unknown_protocol_kind_is_named() {
    let text = MINIMAL.replace(r#""kind": "gibbs-direct""#, r#""kind": "telepathy""#);
    match parse_scenario(&text).unwrap_err() {
        CliError::UnknownKind { path, tag } => {
            assert_eq!(tag, "telepathy");
            assert_eq!(path, "protocol.kind");
        }
        other => panic!("unexpected error {other}"),
    }
    let text = MINIMAL.replace(r#""kind": "integrate""#, r#""kind": "divination""#);
    match parse_scenario(&text).unwrap_err() {
        CliError::UnknownKind { path, tag } => {
            assert_eq!(tag, "divination");
            assert_eq!(path, "analyses[0].kind");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn unknown_fields_report_their_path() {
    let text = MINIMAL.replace(r#""t_end": 5.0"#, r#""t_end": 5.0, "tend": 3.0"#);
    match parse_scenario(&text).unwrap_err() {
        CliError::Schema { path, message } => {
            assert!(path.starts_with("analyses[0]"), "{path}");
            assert!(message.contains("tend"), "{message}");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn gibbs_scenario_passes_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&scenario_path("gibbs_n3.json"), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = fs::read_to_string(dir.path().join("00_integrate_trajectory.csv")).unwrap();
    assert!(csv.lines().next().unwrap().starts_with("t,"));
    assert!(csv.lines().count() > 10);
    let roots = read_json(&dir.path().join("01_equilibria_roots.json"));
    assert!(!roots["roots"].as_array().unwrap().is_empty());
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["passed"], Value::Bool(true));
}

#[test]
fn counterexample_reports_both_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&scenario_path("counterexample_s4.json"), dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report = read_json(&dir.path().join("report.json"));
    let ce = report["analyses"]
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["kind"] == "counterexample")
        .unwrap();
    let text = ce.to_string();
    assert!(text.contains("verdict periodic"));
    assert!(text.contains("verdict fixed-point"));
}

#[test]
fn broken_lyapunov_fixture_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/broken_lyapunov_sign.json");
    let out = run(&fixture, dir.path());
    assert_eq!(out.status.code(), Some(EXIT_VERIFICATION));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.lines().any(|l| l.starts_with("FAIL") && l.contains("decrease")), "{stdout}");
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["passed"], Value::Bool(false));
}

#[test]
fn repeated_runs_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for scenario in ["gibbs_n3.json", "potential_ladder.json"] {
        assert!(run(&scenario_path(scenario), a.path()).status.code().is_some());
        assert!(run(&scenario_path(scenario), b.path()).status.code().is_some());
        let mut names: Vec<_> = fs::read_dir(a.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(names.len() > 2);
        for name in names {
            let x = fs::read(a.path().join(&name)).unwrap();
            let y = fs::read(b.path().join(&name)).unwrap();
            assert!(x == y, "{scenario}: {name:?} differs");
        }
    }
}

#[test]
fn seed_override_changes_stochastic_output() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let s = scenario_path("gibbs_n3.json");
    run(&s, a.path());
    bin(&["run", s.to_str().unwrap(), "--output", b.path().to_str().unwrap(), "--seed", "99"]);
    let x = fs::read(a.path().join("03_stochastic_path.csv")).unwrap();
    let y = fs::read(b.path().join("03_stochastic_path.csv")).unwrap();
    assert_ne!(x, y);
    assert_eq!(read_json(&b.path().join("report.json"))["seed"], 99);
}

#[test]
fn bundled_scenarios_round_trip() {
    let mut files: Vec<_> = fs::read_dir(repo_root().join("scenarios"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.push(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/broken_lyapunov_sign.json"));
    assert!(files.len() >= 5);
    for file in files {
        let s = load_scenario(&file).unwrap();
        let again = parse_scenario(&s.to_json()).unwrap();
        assert_eq!(s, again, "{}", file.display());
    }
}

#[test]
fn suite_runs_every_bundled_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin(&[
        "suite",
        repo_root().join("scenarios").to_str().unwrap(),
        "--output",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let suite = read_json(&dir.path().join("suite_report.json"));
    let entries = suite["scenarios"].as_array().unwrap();
    assert_eq!(entries.len(), 4);
    assert!(entries.iter().all(|e| e["exit_code"] == 0));
    assert!(dir.path().join("gibbs_n3/report.json").exists());
}
