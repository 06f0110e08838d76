use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ambiprop::Trace;

const SPIRAL: &str = r#"{
  "name": "spiral",
  "dynamics": {"family": "double_spiral"},
  "initial": {"center": {"mean": [0.1, -0.5], "variances": [0.001, 0.001]}, "radius": 0.01},
  "noise": {"center": {"mean": [0.0, 0.0], "variances": [0.0001, 0.0001]}, "radius": 0.01},
  "horizon": 20,
  "seed": 3
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ambiprop"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

#[test]
fn bundled_double_spiral_writes_21_steps_and_reloads() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = configs().join("double_spiral.json");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(data_rows(&out.join("steps.csv")), 21);

    let text = fs::read_to_string(out.join("trace.json")).unwrap();
    let trace: Trace = serde_json::from_str(&text).unwrap();
    assert_eq!(trace.balls.len(), 21);
    let again = serde_json::to_string_pretty(&trace).unwrap();
    assert_eq!(again.trim_end(), text.trim_end());
}

#[test]
fn negative_noise_radius_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = SPIRAL.replace(r#"[0.0001, 0.0001]}, "radius": 0.01"#, r#"[0.0001, 0.0001]}, "radius": -0.01"#);
    let cfg = write(tmp.path(), "bad.json", &bad);
    let o = run(&["run", cfg.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("noise ball radius must be nonnegative"), "{}", stderr(&o));
}

#[test]
fn missing_config_exits_2() {
    let o = run(&["run", "/nonexistent/config.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn minimal_run_has_one_step() {
    let tmp = tempfile::tempdir().unwrap();
    let text = r#"{
      "dynamics": {"family": "quadruple_tank"},
      "initial": {"center": {"mean": [1.5, 2.5, 0.5, 1.0], "variances": [0.001, 0.02, 0.4, 0.01]}, "radius": 0.01},
      "noise": {"center": {"means": [[0.01, 0.01, 0.01, 0.01], [-0.01, -0.01, -0.01, -0.01]],
                           "covariance": [[0.01,0,0,0],[0,0.01,0,0],[0,0,0.0002,0],[0,0,0,0.001]]}, "radius": 0.01},
      "horizon": 1, "budget": 1, "compression": 1
    }"#;
    let cfg = write(tmp.path(), "min.json", text);
    let out = tmp.path().join("out");
    let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let trace: Trace = serde_json::from_str(&fs::read_to_string(out.join("trace.json")).unwrap()).unwrap();
    assert_eq!(trace.reports.len(), 1);
    assert_eq!(trace.reports[0].support_size, 2);
    assert_eq!(data_rows(&out.join("steps.csv")), 2);
}

#[test]
fn upper_sweep_is_ordered_deterministic_and_monotone_in_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "spiral.json", SPIRAL);
    let sweep = configs().join("table2_upper.json");
    let mut tables = Vec::new();
    for run_id in 0..2 {
        let out = tmp.path().join(format!("out{run_id}"));
        let o = run(&["sweep", cfg.to_str().unwrap(), sweep.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        tables.push(fs::read_to_string(out.join("table.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    let rows: Vec<Vec<String>> =
        tables[0].lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect();
    assert_eq!(rows.len(), 9);
    let key: Vec<(usize, usize)> = rows.iter().map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap())).collect();
    let mut sorted = key.clone();
    sorted.sort();
    assert_eq!(key, sorted);
    let theta: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    for n in 0..3 {
        assert!(theta[3 + n] <= theta[n] + 1e-12 && theta[6 + n] <= theta[3 + n] + 1e-12, "{theta:?}");
    }
    assert!(theta.iter().all(|t| (0.05..=0.30).contains(t)), "{theta:?}");
}

#[test]
fn lower_sweep_is_driven_by_noise_radius() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "spiral.json", SPIRAL);
    let sweep = configs().join("table2_lower.json");
    let out = tmp.path().join("out");
    let o = run(&["sweep", cfg.to_str().unwrap(), sweep.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let theta: Vec<f64> = fs::read_to_string(out.join("table.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(5).unwrap().parse().unwrap())
        .collect();
    assert_eq!(theta.len(), 9);
    // rows: initial radius outer, noise radius inner
    for block in theta.chunks(3) {
        assert!(block[0] < block[1] && block[1] < block[2]);
    }
    for j in 0..3 {
        let (lo, hi) = (theta[j], theta[6 + j]);
        assert!((hi - lo).abs() / lo < 0.1, "{theta:?}");
    }
}

#[test]
fn empty_sweep_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "spiral.json", SPIRAL);
    let sweep = write(tmp.path(), "sweep.json", "{}");
    let o = run(&["sweep", cfg.to_str().unwrap(), sweep.to_str().unwrap(), "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

fn theta_star(o: &Output) -> f64 {
    let line = stdout(o).lines().find(|l| l.starts_with("theta_star:")).unwrap().to_string();
    line.split(':').nth(1).unwrap().trim().parse().unwrap()
}

#[test]
fn fixed_point_arithmetic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "spiral.json", SPIRAL);
    let o = run(&["fixed-point", cfg.to_str().unwrap(), "--epsilon", "0"]);
    assert!(o.status.success());
    assert!((theta_star(&o) - 0.05).abs() < 1e-6);
    let o = run(&["fixed-point", cfg.to_str().unwrap(), "--epsilon", "0.05"]);
    assert!((theta_star(&o) - 0.25).abs() < 1e-6);
    assert!(stdout(&o).contains("lipschitz: 0.800000"));
}

#[test]
fn identity_is_not_contractive() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SPIRAL.replace(r#"{"family": "double_spiral"}"#, r#"{"family": "linear", "A": [[1, 0], [0, 1]]}"#);
    let cfg = write(tmp.path(), "id.json", &text);
    let o = run(&["fixed-point", cfg.to_str().unwrap(), "--epsilon", "0"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("not contractive"));
}

#[test]
fn validate_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SPIRAL.replace(r#""horizon": 20"#, r#""horizon": 5, "validation": {"distance_samples": 300, "mean_samples": 2000}"#);
    let cfg = write(tmp.path(), "spiral.json", &text);
    let out = tmp.path().join("out");
    let o = run(&["validate", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--samples", "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("0 mean violations"));
    assert_eq!(data_rows(&out.join("validation.csv")), 6);
    assert_eq!(data_rows(&out.join("samples.csv")), 6 * 300);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("validation.json")).unwrap()).unwrap();
    assert_eq!(report["rows"].as_array().unwrap().len(), 6);
}

#[test]
fn accounting_flag_changes_the_radius() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "spiral.json", &SPIRAL.replace(r#""horizon": 20"#, r#""horizon": 5"#));
    let mut finals = Vec::new();
    for acc in ["post", "paper"] {
        let out = tmp.path().join(acc);
        let o = run(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--compression-accounting", acc]);
        assert!(o.status.success());
        let trace: Trace = serde_json::from_str(&fs::read_to_string(out.join("trace.json")).unwrap()).unwrap();
        finals.push(trace.final_radius());
    }
    assert_ne!(finals[0], finals[1]);
}
