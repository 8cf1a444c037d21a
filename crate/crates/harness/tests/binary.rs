//! Exit codes and outputs of the `confgame` binary.

use std::path::PathBuf;
use std::process::Command;

fn confgame(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_confgame")).args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name).to_string_lossy().into_owned()
}

#[test]
fn validate_on_the_t1_spec_file_passes() {
    let (code, out, err) = confgame(&["validate", "--spec", &fixture("t1.spec")]);
    assert_eq!(code, 0, "{out}{err}");
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let (code, _, err) = confgame(&["transmogrify"]);
    assert_eq!(code, 64);
    assert!(err.contains("Usage"));
}

#[test]
fn malformed_spec_file_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.spec");
    std::fs::write(&bad, "[game]\nhorizon = 0\n").unwrap();
    assert_eq!(confgame(&["validate", "--spec", bad.to_str().unwrap()]).0, 1);
}

#[test]
fn identify_reports_block_errors_against_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let d = data.to_str().unwrap();
    assert_eq!(confgame(&["simulate", "--spec", &fixture("t1.spec"), "--n", "20000", "--seeds", "3", "--out", d]).0, 0);
    let (code, out, err) = confgame(&["identify", "--data", d, "--spec", &fixture("t1.spec")]);
    assert_eq!(code, 0, "{err}");
    let sup: f64 = out
        .lines()
        .find(|l| l.starts_with("1 reward (A)"))
        .and_then(|l| l.rsplit(',').next())
        .and_then(|v| v.parse().ok())
        .expect("block error line");
    assert!(sup < 0.1, "{out}");
}

#[test]
fn benchmark_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    let out = dir.path().join("out");
    std::fs::write(&cfg, "id = \"smoke\"\nspec = \"t1\"\nn_grid = [100]\n").unwrap();
    let (code, stdout, err) = confgame(&["benchmark", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(stdout.contains("cells,1"));
    for f in ["report.csv", "summary.csv", "timings.csv", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    std::fs::write(&cfg, "id = \"bad\"\nspec = \"t1\"\nn_grid = [200, 100]\n").unwrap();
    assert_eq!(confgame(&["benchmark", "--config", cfg.to_str().unwrap()]).0, 1);
}
