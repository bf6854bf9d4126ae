//! Command-line interface behavior: verbs, exit codes, output files.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flowprobe"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.json"))
}

#[test]
fn validate_accepts_bundled_scenarios() {
    let status = bin()
        .args(["validate"])
        .arg(scenario("trwcb_fig4"))
        .status()
        .expect("spawn");
    assert_eq!(status.code(), Some(0));
}

#[test]
fn validate_rejects_unknown_keys_with_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let json = std::fs::read_to_string(scenario("trwcb_fig4")).unwrap();
    std::fs::write(&path, json.replace("\"seed\": 42,", "\"seed\": 42, \"mystery\": 1,")).unwrap();
    let status = bin().args(["validate"]).arg(&path).status().expect("spawn");
    assert_eq!(status.code(), Some(2));
}

#[test]
fn run_writes_the_output_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig4");
    let status = bin()
        .args(["run"])
        .arg(scenario("trwcb_fig4"))
        .arg("--out")
        .arg(&out)
        .status()
        .expect("spawn");
    assert_eq!(status.code(), Some(0));
    for file in ["trace.csv", "report.json", "summary.json", "fig4_bitmap.csv", "observations.csv"] {
        assert!(out.join(file).exists(), "{file} missing");
    }
    // the report summarizes back
    let status = bin().args(["report"]).arg(&out).status().expect("spawn");
    assert_eq!(status.code(), Some(0));
}

#[test]
fn run_checks_passivity_when_asked() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("detect");
    let output = bin()
        .args(["run"])
        .arg(scenario("trwcb_detect_default"))
        .arg("--out")
        .arg(&out)
        .arg("--check-passivity")
        .output()
        .expect("spawn");
    assert_eq!(output.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(stdout.contains("passivity"), "{stdout}");
}

#[test]
fn sweep_writes_the_grid_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let status = bin()
        .args(["sweep"])
        .arg(scenario("obfuscation_sweep"))
        .arg("--out")
        .arg(&out)
        .args(["--trials", "2000"])
        .status()
        .expect("spawn");
    assert_eq!(status.code(), Some(0));
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(csv.starts_with("n,k,o,p_formula,p_monte_carlo,trials\n"));
}
