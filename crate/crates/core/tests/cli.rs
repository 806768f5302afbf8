//! Black-box tests of the binary: exit codes, CSV artifacts, determinism.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output};

fn paper_json() -> &'static str {
    concat!(env!("CARGO_MANIFEST_DIR"), "/../../paper.json")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epi"))
        .args(args)
        .output()
        .expect("spawn epi")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.json");
    let mut f = fs::File::create(&path).unwrap();
    f.write_all(body.as_bytes()).unwrap();
    path.to_str().unwrap().to_string()
}

fn csv_field(csv: &str, column: &str, row: usize) -> f64 {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header
        .iter()
        .position(|h| *h == column)
        .unwrap_or_else(|| panic!("no column {column} in {header:?}"));
    let line = lines.nth(row).unwrap();
    line.split(',').nth(idx).unwrap().parse().unwrap()
}

#[test]
fn link_budget_emits_paper_power_chain() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["link-budget", paper_json(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(dir.path().join("link_budget.csv")).unwrap();
    // dialect: comma, LF, UTF-8, header row, one data row
    assert!(!csv.contains('\r'));
    assert!(csv.ends_with('\n'));
    assert_eq!(csv.lines().count(), 2);
    let p1 = csv_field(&csv, "received_power_sat", 0);
    assert!((p1 - 1.25e-3).abs() / 1.25e-3 < 1e-12);
    let p2 = csv_field(&csv, "circulating_power", 0);
    assert!((p2 - 1.25e3).abs() / 1.25e3 < 1e-12);
    // 12 significant digits in the mantissa
    assert!(csv.contains("1.25000000000e"));
}

#[test]
fn solve_geometry_recovers_synthetic_trims() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["solve-geometry", paper_json(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(dir.path().join("geometry_solution.csv")).unwrap();
    for (col, want) in [("l1", 4e7), ("l2", 40000000.37), ("l3", 39999999.79)] {
        let got = csv_field(&csv, col, 0);
        assert!((got - want).abs() < 1e-4, "{col}: {got} vs {want}");
    }
    // the trims carry the sub-ulp part of the arm lengths
    for (col, want) in [("trim1", 3.1e-7), ("trim2", -1.7e-7), ("trim3", 2.4e-7)] {
        let got = csv_field(&csv, col, 0);
        assert!((got - want).abs() < 1e-12, "{col}: {got} vs {want}");
    }
    assert!(csv_field(&csv, "residual_norm", 0) < 1e-9);
}

#[test]
fn simulate_is_byte_deterministic() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    for d in [&d1, &d2] {
        let out = run(&[
            "simulate",
            paper_json(),
            "--windows",
            "20000",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["simulate_channels.csv", "simulate_summary.csv"] {
        let a = fs::read(d1.path().join(name)).unwrap();
        let b = fs::read(d2.path().join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }

    // a different seed must actually change the tallies
    let d3 = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        paper_json(),
        "--windows",
        "20000",
        "--seed",
        "1",
        "--out",
        d3.path().to_str().unwrap(),
    ]);
    assert!(out.status.success());
    // channel tallies saturate at this pair rate, so compare the moments
    let a = fs::read_to_string(d1.path().join("simulate_summary.csv")).unwrap();
    let c = fs::read_to_string(d3.path().join("simulate_summary.csv")).unwrap();
    assert_ne!(csv_field(&a, "sample_mean", 0), csv_field(&c, "sample_mean", 0));
}

#[test]
fn sweep_emits_full_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["sweep", paper_json(), "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    // 2 mean_pairs x 1 efficiency x 2 bandwidths x 2 times + header
    assert_eq!(csv.lines().count(), 9);
    assert!((csv_field(&csv, "phase_metric", 0) - 2e-8).abs() < 1e-20);
}

#[test]
fn sensitivity_honors_env_out_dir() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_epi"))
        .args(["sensitivity", paper_json()])
        .env("EPI_OUT_DIR", dir.path())
        .output()
        .expect("spawn epi");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("sensitivity.csv")).unwrap();
    let strain = csv_field(&csv, "strain", 0);
    assert!((strain - 1.25e-23).abs() / 1.25e-23 < 1e-12);
}

#[test]
fn zero_windows_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "simulate",
        paper_json(),
        "--windows",
        "0",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("simulation.windows"));
}

#[test]
fn missing_section_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "{}");
    let out = run(&["sensitivity", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sensitivity"));
}

#[test]
fn unknown_key_is_a_usage_error_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"link_budget": {"laser_powr": 200.0}}"#,
    );
    let out = run(&["link-budget", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("link_budget"));
}

#[test]
fn missing_file_is_a_usage_error() {
    let out = run(&["link-budget", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ambiguous_geometry_is_a_computation_error() {
    // guess trims a full 2e-5 m off: the solver walks back to the truth,
    // crossing half a fringe, and must refuse the integer offsets
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "geometry": {
                "pump_wavelength": 5.3e-7,
                "delta": 508370.0209060991,
                "fit_delta": false,
                "synthetic": {
                    "arm_lengths": [4e7, 4e7, 4e7],
                    "guess_trim": [2e-5, 0.0, 0.0]
                }
            }
        }"#,
    );
    let out = run(&["solve-geometry", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("integer"));
}
