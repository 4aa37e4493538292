//! Runs the `wmark` binary against small scenarios.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn wmark(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wmark"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn last_stderr_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr)
        .lines()
        .last()
        .unwrap_or_default()
        .to_string()
}

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    reader
        .records()
        .map(|r| r.unwrap().iter().map(str::to_string).collect())
        .collect()
}

fn design_value(rows: &[Vec<String>], quantity: &str) -> Vec<f64> {
    rows.iter()
        .filter(|r| r[0] == quantity)
        .map(|r| r[3].parse().unwrap())
        .collect()
}

const SCALAR_UNIT: &str = r#"
seed = 3
[plant]
kind = "discrete"
a = [[1.0]]
b = [[1.0]]
c = [[1.0]]
q = 1.0
r = 1.0
period = 1.0
[weights]
w = 0.5
u = 1.0
[watermark]
budget = 1.0
"#;

#[test]
fn scalar_design_has_closed_form_watermark() {
    let tmp = TempDir::new().unwrap();
    let out = wmark(&["design"], &configs().join("scalar.toml"), tmp.path());
    assert!(out.status.success(), "{}", last_stderr_line(&out));
    assert!(last_stderr_line(&out).starts_with("wmark status=ok command=design"));
    let rows = read_csv(&tmp.path().join("design.csv"));
    let q = design_value(&rows, "watermark_cov");
    assert_eq!(q.len(), 1);
    assert!((q[0] - 0.5).abs() < 1e-12, "q* = {}", q[0]);
    assert_eq!(design_value(&rows, "cost_increase")[0], 1.0);
    assert_eq!(design_value(&rows, "watermark_necessary")[0], 1.0);
}

#[test]
fn zero_budget_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "bad.toml", &SCALAR_UNIT.replace("budget = 1.0", "budget = 0.0"));
    let out = wmark(&["design"], &cfg, &tmp.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
    let last = last_stderr_line(&out);
    assert!(
        last.starts_with("wmark status=error command=design kind=validation exit=1"),
        "{last}"
    );
    assert!(last.contains("watermark.budget"));
    assert!(!tmp.path().join("out").join("design.csv").exists());
}

#[test]
fn unknown_keys_and_missing_files_exit_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(&tmp, "typo.toml", &format!("{SCALAR_UNIT}\n[detector]\nwindoww = 3\n"));
    let out = wmark(&["design"], &cfg, tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(last_stderr_line(&out).contains("kind=validation"));

    let out = wmark(&["design"], &tmp.path().join("absent.toml"), tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(last_stderr_line(&out).starts_with("wmark status=error"));
}

#[test]
fn unstabilizable_plant_is_a_numerical_failure() {
    let tmp = TempDir::new().unwrap();
    let text = SCALAR_UNIT
        .replace("a = [[1.0]]", "a = [[2.0]]")
        .replace("b = [[1.0]]", "b = [[0.0]]");
    let cfg = write_config(&tmp, "unstab.toml", &text);
    let out = wmark(&["design"], &cfg, tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(last_stderr_line(&out).contains("kind=numerical exit=2"));
}

#[test]
fn quadrotor_watermark_is_rank_one_and_saturates_budget() {
    let tmp = TempDir::new().unwrap();
    let out = wmark(&["design"], &configs().join("quadrotor.toml"), tmp.path());
    assert!(out.status.success(), "{}", last_stderr_line(&out));
    let rows = read_csv(&tmp.path().join("design.csv"));
    let entries = design_value(&rows, "watermark_cov");
    assert_eq!(entries.len(), 16);
    let q = nalgebra::DMatrix::from_row_slice(4, 4, &entries);
    let eig = q.clone().symmetric_eigen().eigenvalues;
    let top = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rest: f64 = eig.iter().map(|e| e.abs()).sum::<f64>() - top;
    assert!(top > 0.0 && rest < 1e-9 * top, "eigenvalues {eig:?}");
    assert!((design_value(&rows, "cost_increase")[0] - 1.0).abs() < 1e-9);
    assert!(design_value(&rows, "spectral_radius")[0] < 1.0);
}

#[test]
fn unstable_closed_loop_needs_no_watermark() {
    // Regulator and estimator are each stable, their product is not.
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        &tmp,
        "unstable.toml",
        r#"
seed = 1
[plant]
kind = "discrete"
a = [[1.4, 0.1], [-1.1, -1.4]]
b = [[-0.5], [0.2]]
c = [[-1.0, -0.2]]
q = 0.1
r = 1.0
period = 1.0
"#,
    );
    let out = wmark(&["design"], &cfg, tmp.path());
    assert!(out.status.success(), "{}", last_stderr_line(&out));
    assert!(last_stderr_line(&out).contains("status=watermark-unnecessary"));
    let rows = read_csv(&tmp.path().join("design.csv"));
    assert!(design_value(&rows, "spectral_radius")[0] > 1.0);
    assert_eq!(design_value(&rows, "watermark_necessary")[0], 0.0);
    assert!(design_value(&rows, "watermark_cov").iter().all(|v| *v == 0.0));
}

#[test]
fn sweep_marks_an_interior_argmax() {
    let tmp = TempDir::new().unwrap();
    let out = wmark(&["sweep"], &configs().join("quadrotor.toml"), tmp.path());
    assert!(out.status.success(), "{}", last_stderr_line(&out));
    let rows = read_csv(&tmp.path().join("delta_g_vs_T.csv"));
    assert_eq!(rows.len(), 6);
    let marked: Vec<usize> = (0..rows.len()).filter(|i| rows[*i][6] == "1").collect();
    assert_eq!(marked.len(), 1);
    assert!(marked[0] > 0 && marked[0] < rows.len() - 1);
    assert!(rows.iter().all(|r| r[5] == "ok"));
}

#[test]
fn single_point_sweep_is_its_own_argmax() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        &tmp,
        "one.toml",
        "seed = 1\n[plant]\nkind = \"quadrotor\"\n[sampling]\ngrid = [0.05]\nmax_period = 0.1\n",
    );
    let out = wmark(&["sweep"], &cfg, tmp.path());
    assert!(out.status.success(), "{}", last_stderr_line(&out));
    let rows = read_csv(&tmp.path().join("delta_g_vs_T.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][6], "1");
}

#[test]
fn sweep_rejects_a_discrete_plant() {
    let tmp = TempDir::new().unwrap();
    let out = wmark(&["sweep"], &configs().join("scalar.toml"), tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(last_stderr_line(&out).contains("plant.kind"));
}

#[test]
fn simulate_is_reproducible_and_seed_sensitive() {
    let tmp = TempDir::new().unwrap();
    let cfg = configs().join("scalar.toml");
    let run = |dir: &str, seed: &str| {
        let out = Command::new(env!("CARGO_BIN_EXE_wmark"))
            .args(["simulate", "--trials", "8", "--seed", seed, "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(tmp.path().join(dir))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", last_stderr_line(&out));
        std::fs::read(tmp.path().join(dir).join("gk_trace.csv")).unwrap()
    };
    let a = run("a", "11");
    assert_eq!(a, run("b", "11"));
    assert_ne!(a, run("c", "12"));

    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("a").join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["dof"], 10);
    assert!(summary["expected_shift"].as_f64().unwrap() > 0.0);
    let trace = read_csv(&tmp.path().join("a").join("gk_trace.csv"));
    assert_eq!(trace.len(), 2000);
    assert!(trace.iter().any(|r| r[4] == "1"));
}

#[test]
fn roc_curves_span_the_unit_square() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        &tmp,
        "roc.toml",
        r#"
seed = 5
[plant]
kind = "quadrotor"
[sampling]
grid = [0.1]
max_period = 0.2
[simulation]
horizon = 400
trials = 8
[attack]
record_start = 20
record_len = 150
replay_start = 170
"#,
    );
    let out = wmark(&["roc"], &cfg, tmp.path());
    assert!(out.status.success(), "{}", last_stderr_line(&out));
    for name in ["roc_T0.1.csv", "roc_T0.1_baseline.csv"] {
        let rows = read_csv(&tmp.path().join(name));
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap()))
            .collect();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)), "{name}");
        assert_eq!(pts.last(), Some(&(1.0, 1.0)), "{name}");
        assert!(pts.windows(2).all(|w| w[1].0 >= w[0].0 && w[1].1 >= w[0].1), "{name}");
    }
    let summary = read_csv(&tmp.path().join("auc_summary.csv"));
    assert_eq!(summary.len(), 1);
    let auc: f64 = summary[0][3].parse().unwrap();
    let baseline: f64 = summary[0][6].parse().unwrap();
    assert!(auc > baseline);
}

#[test]
fn cost_table_is_normalized_and_increasing() {
    let tmp = TempDir::new().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_wmark"))
        .args(["table", "--trials", "0", "--config"])
        .arg(configs().join("integrator.toml"))
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", last_stderr_line(&out));
    let rows = read_csv(&tmp.path().join("cost_ratios.csv"));
    assert_eq!(rows[0][2], "1");
    let ratios: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(ratios.windows(2).all(|w| w[1] > w[0]), "{ratios:?}");
    assert!(rows.iter().all(|r| r[4].is_empty()));
}

#[test]
fn usage_errors_exit_one() {
    let out = Command::new(env!("CARGO_BIN_EXE_wmark"))
        .arg("design")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(last_stderr_line(&out).contains("kind=usage"));
    let out = Command::new(env!("CARGO_BIN_EXE_wmark"))
        .arg("--help")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
}
