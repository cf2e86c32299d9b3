//! End-to-end runs of the `selmut` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_selmut"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Writes `text` as a scenario file inside `dir`.
fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.json");
    fs::write(&p, text).unwrap();
    p
}

const THREE_ATOMS: &str = r#"{
  "schema": 1,
  "space": {"labeled": {"n": 3}},
  "model": {"ricker": {"kappa": [20, 10, 1], "eta": [5, 0.5, 0.5], "theta": 0.5}},
  KERNEL
  "initial": {"weights": [1, 1, 1]},
  "integrator": {"t_end": 20},
  "analyses": ANALYSES
}"#;

fn three_atoms(kernel: &str, analyses: &str) -> String {
    THREE_ATOMS.replace("KERNEL", kernel).replace("ANALYSES", analyses)
}

#[test]
fn bundled_ricker_ass_converges() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["analyze", scenario("ricker_ass.json").to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = read_json(&tmp.path().join("report.json"));
    assert_eq!(report["ass"]["converged"], Value::Bool(true));
    assert_eq!(report["ass"]["target"], "q2");
    assert_eq!(report["permanence"]["holds"], Value::Bool(true));
    assert!(report["integral_representation"]["max_rel_error"].as_f64().unwrap() < 1e-5);
    for f in ["trajectory.csv", "permanence.csv", "lyapunov.csv", "ratio.csv"] {
        assert!(tmp.path().join(f).exists(), "{f} missing");
    }
    let traj = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next(), Some("t,total,q1,q2,q3"));
}

#[test]
fn simulate_writes_only_trajectory() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["simulate", scenario("ricker_ass.json").to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(tmp.path().join("trajectory.csv").exists());
    assert!(!tmp.path().join("lyapunov.csv").exists());
    let report = read_json(&tmp.path().join("report.json"));
    assert!(report.get("ass").is_none());
    assert_eq!(report["integration"]["completed"], Value::Bool(true));
}

#[test]
fn equilibrium_command_skips_integration() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["equilibrium", scenario("ricker2_continuation.json").to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(!tmp.path().join("trajectory.csv").exists());
    let report = read_json(&tmp.path().join("report.json"));
    assert_eq!(report["equilibrium"]["converged"], Value::Bool(true));
    assert_eq!(report["continuation"].as_array().unwrap().len(), 3);
    assert!(tmp.path().join("continuation.csv").exists());
}

#[test]
fn wrong_kernel_dimension_is_a_validation_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_scenario(tmp.path(), &three_atoms(r#""kernel": {"rows": [[1, 0], [0, 1]]},"#, "{}"));
    let out = tmp.path().join("out");
    let o = run(&["analyze", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("3 x 3"), "{}", stderr(&o));
    assert!(!out.join("trajectory.csv").exists());
}

#[test]
fn integral_representation_with_gaussian_kernel_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_scenario(
        tmp.path(),
        &three_atoms(r#""kernel": {"gaussian": {"sigma": 0.5}},"#, r#"{"integral_representation": true}"#),
    );
    let o = run(&["analyze", cfg.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("precondition"), "{}", stderr(&o));
}

#[test]
fn every_unknown_field_is_listed() {
    let tmp = TempDir::new().unwrap();
    let text = three_atoms(r#""colour": "red","#, r#"{"ass": {"tol": 1e-3, "tolerance": 1}, "permanance": true}"#);
    let cfg = write_scenario(tmp.path(), &text);
    let o = run(&["analyze", cfg.to_str().unwrap()], &tmp.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    for f in ["colour", "analyses.ass.tolerance", "analyses.permanance"] {
        assert!(err.contains(f), "missing {f}: {err}");
    }
}

#[test]
fn stiff_run_exits_3_with_partial_trajectory() {
    let tmp = TempDir::new().unwrap();
    let text = three_atoms("", "{}").replace(r#""t_end": 20"#, r#""t_end": 20, "dt_min": 0.5, "dt_init": 1.0"#);
    let cfg = write_scenario(tmp.path(), &text);
    let out = tmp.path().join("out");
    let o = run(&["analyze", cfg.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["integration"]["completed"], Value::Bool(false));
    assert!(!report["errors"].as_array().unwrap().is_empty());
    assert!(fs::read_to_string(out.join("trajectory.csv")).unwrap().lines().count() >= 2);
}

#[test]
fn empty_sweep_values_exit_2() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario("ricker2_continuation.json");
    let o = run(&["sweep", cfg.to_str().unwrap(), "--param", "kernel.blend.eps", "--values", ""], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["sweep", cfg.to_str().unwrap(), "--param", "integrator.t_end", "--values", "1"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["sweep", cfg.to_str().unwrap(), "--param", "kernel.blend.nope", "--values", "1"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

fn sweep_runs(out: &Path) -> Vec<Value> {
    read_json(&out.join("sweep.json"))["runs"].as_array().unwrap().clone()
}

#[test]
fn eps_sweep_approaches_the_dirac_anchor() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario("ricker2_continuation.json");
    let o = run(
        &["sweep", cfg.to_str().unwrap(), "--param", "kernel.blend.eps", "--values", "0.1,0.01,0.001"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let runs = sweep_runs(tmp.path());
    let dists: Vec<f64> =
        runs.iter().map(|r| r["report"]["equilibrium"]["anchor_l1"].as_f64().unwrap()).collect();
    assert!(dists.windows(2).all(|w| w[1] < w[0]), "{dists:?}");
    assert!(dists[2] < 1e-2);
    let csv = fs::read_to_string(tmp.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(tmp.path().join("run_2/report.json").exists());
}

#[test]
fn initial_mass_sweep_shares_the_limsup_bound() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario("ricker2_continuation.json");
    let o = run(
        &["sweep", cfg.to_str().unwrap(), "--param", "initial.uniform.total", "--values", "0.5,1,5"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let runs = sweep_runs(tmp.path());
    let bounds: Vec<&Value> = runs.iter().map(|r| &r["report"]["permanence"]["limsup_bound"]).collect();
    assert_eq!(bounds.len(), 3);
    assert!(bounds.iter().all(|b| *b == bounds[0]));
    let k = bounds[0].as_f64().unwrap();
    assert!((k - 10f64.ln()).abs() < 1e-9);
    for r in &runs {
        let tail = r["report"]["permanence"]["tail_max_total"].as_f64().unwrap();
        assert!(tail <= k + 1e-6, "{tail} > {k}");
    }
}

#[test]
fn failing_sweep_runs_are_recorded() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario("ricker2_continuation.json");
    // eps = 2 is outside [0, 1]: that run fails validation, the others proceed.
    let o = run(&["sweep", cfg.to_str().unwrap(), "--param", "kernel.blend.eps", "--values", "0.1,2"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let runs = sweep_runs(tmp.path());
    assert_eq!(runs[0]["exit_code"], 0);
    assert_eq!(runs[1]["exit_code"], 2);
    assert!(!runs[1]["errors"].as_array().unwrap().is_empty());
}

#[test]
fn identical_configs_give_identical_outputs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let tmp = TempDir::new().unwrap();
    let text = three_atoms(r#""kernel": {"gaussian": {"sigma": 1.0}},"#, r#"{"permanence": true, "ass": {}}"#)
        .replace(r#""initial": {"weights": [1, 1, 1]}"#, r#""initial": {"random": {"total": 2}}"#);
    let cfg = write_scenario(tmp.path(), &text);
    for out in [a.path(), b.path()] {
        let o = run(&["analyze", cfg.to_str().unwrap(), "--seed", "42"], out);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for f in ["trajectory.csv", "permanence.csv", "report.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
    let c = TempDir::new().unwrap();
    run(&["analyze", cfg.to_str().unwrap(), "--seed", "43"], c.path());
    assert_ne!(fs::read(a.path().join("trajectory.csv")).unwrap(), fs::read(c.path().join("trajectory.csv")).unwrap());
}
