use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nilspec(args: &[&str], config: &str, dir: &Path) -> Output {
    let path = dir.join("config.json");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_nilspec"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .expect("spawn nilspec")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap()
}

#[test]
fn missing_metric_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = nilspec(&["albanese"], r#"{"algebra": "torus:2"}"#, tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("metric"), "{err}");
    assert!(!tmp.path().join("out/report.json").exists());
}

#[test]
fn out_of_range_rho_names_its_path() {
    let tmp = tempfile::tempdir().unwrap();
    let config = r#"{"algebra": "torus:2", "metric": {"kind": "left_invariant", "Q": [[1, 0], [0, 1]]}, "rho": [2, 4, 1000]}"#;
    let out = nilspec(&["spectrum"], config, tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("rho[2]"), "{err}");
}

#[test]
fn config_is_required_outside_verify() {
    let out = Command::new(env!("CARGO_BIN_EXE_nilspec")).arg("ccball").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn albanese_of_a_laminate() {
    let tmp = tempfile::tempdir().unwrap();
    let config = r#"{
        "algebra": "torus:2",
        "metric": {"kind": "expr", "entries": [["1/(1+0.5*sin(2*pi*x1))", "0"], ["1+0.5*sin(2*pi*x1)"]]},
        "resolution": {"cell": [64, 8]}
    }"#;
    let out = nilspec(&["albanese", "--threads", "1"], config, tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(tmp.path());
    assert_eq!(r["study"], "albanese");
    let q11 = r["results"]["cell"]["q"][0][0].as_f64().unwrap();
    // Harmonic mean of 1 + sin(2πt)/2 is sqrt(3)/2.
    assert!((q11 - 0.75f64.sqrt()).abs() < 2e-3, "{q11}");
    let csv = std::fs::read_to_string(tmp.path().join("out/albanese.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("i,j,q"));
    let log = std::fs::read_to_string(tmp.path().join("out/run.log")).unwrap();
    assert!(log.contains("threads 1") && log.contains("tolerances"), "{log}");
}

#[test]
fn spectrum_writes_one_row_per_rho_and_index() {
    let tmp = tempfile::tempdir().unwrap();
    let config = r#"{
        "algebra": "torus:2",
        "metric": {"kind": "left_invariant", "Q": [[1, 0], [0, 1]]},
        "rho": [2, 3, 4],
        "k": 2,
        "resolution": {"min_per_unit": 16, "max_per_unit": 16, "lattice_step": 0.125}
    }"#;
    let out = nilspec(&["spectrum"], config, tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(tmp.path().join("out/spectrum.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("rho,i,lambda,residual,grid_N"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 6);
    for (n, row) in rows.iter().enumerate() {
        assert_eq!(row[0].parse::<f64>().unwrap(), [2.0, 3.0, 4.0][n / 2]);
        assert_eq!(row[1], ["1", "2"][n % 2]);
        // The flat disk: λ₁ = j₀,₁², λ₂ = j₁,₁², a few percent high on a coarse grid.
        let lambda: f64 = row[2].parse().unwrap();
        let exact = [5.7832, 14.682][n % 2];
        assert!(lambda > 0.95 * exact && lambda < 1.15 * exact, "{row:?}");
    }
}

#[test]
fn reports_are_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let config = r#"{"algebra": "heisenberg:3", "metric": {"kind": "left_invariant", "Q": [[1, 0, 0], [0, 2, 0], [0, 0, 1]]}, "seed": 7}"#;
    let a = nilspec(&["albanese", "--threads", "1"], config, tmp.path());
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let first = std::fs::read(tmp.path().join("out/report.json")).unwrap();
    let b = nilspec(&["albanese", "--threads", "2"], config, tmp.path());
    assert!(b.status.success());
    assert_eq!(first, std::fs::read(tmp.path().join("out/report.json")).unwrap());
}
