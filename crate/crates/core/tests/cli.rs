//! End-to-end checks of the command-line front end and its exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "master_seed = 11
[sampler]
gallery_size = 200
[verify]
lemma1_trials = 2000
prop1_trials = 200
theorem1_worlds = 6
ksg_spot_checks = 1
ksg_samples = 2000
utility_trials = 100
prop2_worlds = 2
prop2_trials = 500
corollary1_generators = 2
";

fn anonsim(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_anonsim"));
    cmd.args(args).env_remove("ANONSIM_OUT_DIR");
    if let Some(dir) = env_out {
        cmd.env("ANONSIM_OUT_DIR", dir);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn verify_passes_and_report_rerenders() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let run = anonsim(&["verify", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["summary.txt", "manifest.csv", "config.resolved.toml", "verify/bounds.csv", "verify/checks.csv"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let stored = fs::read_to_string(out.join("summary.txt")).unwrap();
    let report = anonsim(&["report", "--in", out.to_str().unwrap()], None);
    assert_eq!(report.status.code(), Some(0));
    assert_eq!(String::from_utf8(report.stdout).unwrap(), stored);
}

#[test]
fn injected_failure_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}inject_failure = \"theorem2\"\n"));
    let out = dir.path().join("out");
    let run = anonsim(&["verify", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("failed: theorem2"));
    let report = anonsim(&["report", "--in", out.to_str().unwrap()], None);
    assert_eq!(report.status.code(), Some(1));
}

#[test]
fn configuration_and_usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(anonsim(&["frobnicate"], None).status.code(), Some(2));
    assert_eq!(anonsim(&[], None).status.code(), Some(2));
    let missing = dir.path().join("absent.toml");
    assert_eq!(anonsim(&["verify", "--config", missing.to_str().unwrap()], None).status.code(), Some(2));

    let unknown = write_config(dir.path(), "master_seed = 1\n[world]\nrh0 = 0.5\n");
    let run = anonsim(&["threat", "--config", &unknown], None);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("rh0"));

    let unseeded = write_config(dir.path(), "[world]\np = 4\n");
    let run = anonsim(&["verify", "--config", &unseeded], None);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("master_seed required"));

    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert_eq!(anonsim(&["report", "--in", empty.to_str().unwrap()], None).status.code(), Some(2));
    assert_eq!(anonsim(&["--help"], None).status.code(), Some(0));
}

#[test]
fn environment_overrides_the_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let configured = dir.path().join("configured");
    let text = format!("{SMALL}[suites]\nverify = false\nthreat = false\noptimize = false\nestimators = false\n")
        .replacen("master_seed = 11\n", &format!("master_seed = 11\noutput_dir = {:?}\n", configured.to_str().unwrap()), 1);
    let cfg = write_config(dir.path(), &text);

    let run = anonsim(&["calibrate", "--config", &cfg], None);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(configured.join("calibrate/calibration.csv").exists());

    let env_dir = dir.path().join("from_env");
    let run = anonsim(&["calibrate", "--config", &cfg], Some(&env_dir));
    assert_eq!(run.status.code(), Some(0));
    assert!(env_dir.join("calibrate/calibration.csv").exists());

    // With every suite disabled, `run` executes nothing and passes.
    let run = anonsim(&["run", "--config", &cfg], Some(&env_dir));
    assert_eq!(run.status.code(), Some(0));
    let summary = fs::read_to_string(env_dir.join("summary.txt")).unwrap();
    assert!(summary.trim_end().ends_with("overall PASS"), "{summary}");
}
