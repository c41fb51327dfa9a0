//! Exit codes and output layout of the `threescale` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn threescale(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_threescale"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

#[test]
fn blowup_succeeds_and_writes_csvs() {
    let out = tempfile::tempdir().unwrap();
    let res = threescale(&["blowup"], &configs().join("blowup_rotation.toml"), out.path());
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let dir = out.path().join("blowup");
    for f in ["norms.csv", "fits.csv", "timing.csv"] {
        assert!(dir.join(f).is_file(), "missing {f}");
    }
    let fits = std::fs::read_to_string(dir.join("fits.csv")).unwrap();
    assert!(fits.lines().any(|l| l.starts_with("q,slope,expected_slope")));
    assert!(fits.starts_with("# config_sha256="));
}

#[test]
fn reduce_over_directional_modes_succeeds() {
    let out = tempfile::tempdir().unwrap();
    let res = threescale(&["reduce"], &configs().join("reduce_directional.toml"), out.path());
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let dir = out.path().join("reduce");
    assert!(dir.join("mode_k2_3.csv").is_file());
    assert!(dir.join("mode_km1_2.csv").is_file());
    assert!(dir.join("order_report.csv").is_file());
}

#[test]
fn failed_assertions_exit_with_two() {
    // suite member 4 misses the eigenvalue match bound, so the suite raises a flag
    let out = tempfile::tempdir().unwrap();
    let res = threescale(&["reduce"], &configs().join("reduce_random_suite.toml"), out.path());
    assert_eq!(res.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&res.stderr);
    assert!(stderr.lines().any(|l| l.starts_with("FLAG: suite member 4")), "{stderr}");
    assert!(out.path().join("reduce/suite.csv").is_file());
}

#[test]
fn mismatched_subcommand_is_an_error() {
    let out = tempfile::tempdir().unwrap();
    let res = threescale(&["converge"], &configs().join("blowup_rotation.toml"), out.path());
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("blowup experiment"));
}

#[test]
fn bad_configs_are_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = threescale(&["reduce"], &tmp.path().join("nope.toml"), tmp.path());
    assert_eq!(missing.status.code(), Some(1));

    let unknown = tmp.path().join("unknown.toml");
    std::fs::write(&unknown, "experiment = \"blowup\"\neps = [0.1]\ncolour = 3\n").unwrap();
    let res = threescale(&["blowup"], &unknown, tmp.path());
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("colour"));

    let increasing = tmp.path().join("increasing.toml");
    std::fs::write(
        &increasing,
        "experiment = \"blowup\"\neps = [0.05, 0.1]\n[blowup]\nq = [2]\nt = 1.0\n",
    )
    .unwrap();
    let res = threescale(&["blowup"], &increasing, tmp.path());
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("decreasing"));
}
