//! End-to-end runs of the `gl-lattice` binary.

use std::path::Path;
use std::process::{Command, Output};

use gl_lattice::gauge::RawLatticeState;
use gl_lattice::state_file::StateFile;
use gl_lattice::theta::ThetaState;
use gl_lattice::{GaugePerturbation, GridSpec, LatticeShape, VectorField};
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    run_with_env(args, &[])
}

fn run_with_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gl-lattice"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf-8")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn spectrum_reports_landau_levels() {
    let out = run(&["spectrum", "--n", "2", "--grid", "32", "--k", "3"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("expected,computed,abs_err,degeneracy"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    // Degenerate eigenvalues are reported once per cluster.
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], 2.0);
    assert_eq!(rows[1][0], 6.0);
    assert!(rows.iter().all(|r| r[2] < 1e-6));
    assert_eq!(rows[0][3], 2.0);
}

#[test]
fn malformed_arguments_exit_with_usage_code() {
    assert_eq!(code(&run(&["spectrum", "--tau", "banana"])), 2);
    assert_eq!(code(&run(&["beta-scan", "--re", "1:0"])), 2);
    assert_eq!(code(&run(&["beta-scan", "--steps", "0x3"])), 2);
    assert_eq!(code(&run(&["branch", "--t", "0.2,0.1", "--grid", "16"])), 2);
    assert_eq!(code(&run(&["no-such-command"])), 2);
    assert_eq!(code(&run(&["spectrum", "--tau", "-0.2,1.1", "--grid", "16", "--k", "1"])), 0);
    let bad_threads = run_with_env(&["spectrum", "--grid", "16", "--k", "1"], &[("GL_LATTICE_THREADS", "zero")]);
    assert_eq!(code(&bad_threads), 2);
}

#[test]
fn beta_scan_is_independent_of_thread_count() {
    let args = ["beta-scan", "--re", "-0.2:0.5", "--im", "0.9:1.1", "--steps", "3x2", "--grid", "24"];
    let one = run_with_env(&args, &[("GL_LATTICE_THREADS", "1")]);
    let two = run_with_env(&args, &[("GL_LATTICE_THREADS", "2")]);
    assert_eq!(code(&one), 0);
    assert_eq!(one.stdout, two.stdout);
    let text = stdout(&one);
    assert!(text.starts_with("re_tau,im_tau,beta,beta_cell,in_fundamental_domain\n"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn minimize_beta_finds_the_triangular_lattice() {
    let out = run(&["minimize-beta", "--start", "0.3,1.2", "--grid", "32"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let row: Vec<&str> = text.lines().nth(1).expect("one row").split(',').collect();
    let (re, im): (f64, f64) = (row[0].parse().unwrap(), row[1].parse().unwrap());
    assert!((re - 0.5).abs() < 1e-3 && (im - 3f64.sqrt() / 2.0).abs() < 1e-3, "{text}");
}

#[test]
fn branch_below_threshold_reports_no_branch() {
    let out = run(&["branch", "--lambda", "0.9,0.95", "--grid", "16"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    assert_eq!(v["status"], "no_branch");
    assert_eq!(v["samples"].as_array().unwrap().len(), 0);
}

#[test]
fn branch_output_is_deterministic_and_feeds_gauge_fix() {
    let dir = tempfile::tempdir().unwrap();
    let state = dir.path().join("branch.state");
    let fixed = dir.path().join("fixed.state");
    let args = ["branch", "--kappa", "1", "--tau", "rho", "--t", "0.05,0.1", "--grid", "16"];
    let first = run(&[&args[..], &["--state", path_str(&state)]].concat());
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    assert_eq!(first.stdout, run(&args).stdout);
    let v = json(&first);
    assert_eq!(v["status"], "ok");
    let samples = v["samples"].as_array().unwrap();
    assert_eq!(samples.len(), 2);
    let slope = v["fitted_slope"].as_f64().unwrap();
    let expected = v["g_lambda_prime0"].as_f64().unwrap();
    assert!((slope - expected).abs() < 1e-2 * expected);

    let out = run(&["gauge-fix", "--in", path_str(&state), "--out", path_str(&fixed)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let diag = json(&out);
    assert!(diag["mean_a"].as_f64().unwrap() < 1e-12);
    let before = StateFile::read(&state).unwrap().psi().unwrap();
    let after = StateFile::read(&fixed).unwrap().psi().unwrap();
    let worst = before
        .values()
        .iter()
        .zip(after.values())
        .map(|(a, b)| (a.norm() - b.norm()).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-9);
}

#[test]
fn gauge_fix_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("out.state");

    let garbage = dir.path().join("garbage.state");
    std::fs::write(&garbage, b"not a state file").unwrap();
    assert_eq!(code(&run(&["gauge-fix", "--in", path_str(&garbage), "--out", path_str(&out_path)])), 2);

    let missing = dir.path().join("missing.state");
    assert_eq!(code(&run(&["gauge-fix", "--in", path_str(&missing), "--out", path_str(&out_path)])), 2);

    // A potential carrying 10% too much flux.
    let shape = LatticeShape::triangular();
    let grid = GridSpec::uniform(shape, 1, 16).unwrap();
    let psi = ThetaState::new(shape, 1).unwrap().sample(&grid).unwrap();
    let raw = RawLatticeState::from_normal_form(&psi, &GaugePerturbation::zeros(grid)).unwrap();
    let a = VectorField::from_components(
        grid,
        raw.a.x.iter().map(|v| 1.1 * v).collect(),
        raw.a.y.iter().map(|v| 1.1 * v).collect(),
    )
    .unwrap();
    let wrong = RawLatticeState::new(grid, raw.psi.clone(), a).unwrap();
    let wrong_path = dir.path().join("wrong_flux.state");
    StateFile::from_raw(&wrong, 1.0, 1.05).write(&wrong_path).unwrap();
    let out = run(&["gauge-fix", "--in", path_str(&wrong_path), "--out", path_str(&out_path)]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_path.exists());
}

#[test]
fn energy_curve_recovers_leading_coefficients() {
    let out = run(&["energy-curve", "--mu", "0.002:0.01:5", "--grid", "16"]);
    assert_eq!(code(&out), 0);
    let v = json(&out);
    let e0 = v["e0_fit"].as_f64().unwrap();
    let e1 = v["e1_fit"].as_f64().unwrap();
    assert!((e0 - 5.0).abs() < 5e-3, "{e0}");
    assert!((e1 + 4.0).abs() < 2e-2, "{e1}");
}

#[test]
fn quick_verification_passes_and_is_reproducible() {
    let a = run(&["verify", "--level", "quick", "--seed", "3"]);
    assert_eq!(code(&a), 0, "{}", stdout(&a));
    assert_eq!(json(&a)["passed"], true);
    let b = run(&["verify", "--level", "quick", "--seed", "3"]);
    assert_eq!(a.stdout, b.stdout);
}
