//! Subcommand implementations.

use std::io::Write;
use std::path::{Path, PathBuf};

use gl_lattice::abrikosov::{self, BetaConfig, MinimizeOptions};
use gl_lattice::gauge;
use gl_lattice::operators::{self, MagneticLaplacian};
use gl_lattice::solver::{self, Bifurcation, BranchSample, SolverOptions};
use gl_lattice::state_file::StateFile;
use gl_lattice::{normalize_shape, GridSpec, LatticeShape};
use serde::Serialize;

use crate::{parse, CmdResult, Failure};

fn emit(out: Option<&Path>, text: &str) -> CmdResult {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::Usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes()).map_err(|e| Failure::Usage(e.to_string()))
        }
    }
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn shape_of(tau: &str) -> Result<LatticeShape, Failure> {
    Ok(normalize_shape(parse::tau(tau)?)?)
}

pub fn spectrum(n: u32, tau: &str, grid: usize, k: usize) -> CmdResult {
    let shape = shape_of(tau)?;
    let grid = GridSpec::uniform(shape, n, grid)?;
    let pairs = operators::eigs_l(&MagneticLaplacian::new(grid), k)?;
    // Cluster by nearest Landau level (2m+1)n.
    let mut rows: Vec<(f64, Vec<f64>)> = Vec::new();
    for (ev, _) in &pairs {
        let m = ((ev / n as f64 - 1.0) / 2.0).round().max(0.0);
        let expected = (2.0 * m + 1.0) * n as f64;
        match rows.last_mut() {
            Some((e, v)) if *e == expected => v.push(*ev),
            _ => rows.push((expected, vec![*ev])),
        }
    }
    let mut text = String::from("expected,computed,abs_err,degeneracy\n");
    for (expected, vals) in rows {
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let err = vals.iter().map(|v| (v - expected).abs()).fold(0.0, f64::max);
        text.push_str(&format!("{expected},{mean},{err:e},{}\n", vals.len()));
    }
    emit(None, &text)
}

pub fn beta_scan(re: &str, im: &str, steps: &str, grid: usize, out: Option<&Path>) -> CmdResult {
    let (re, im, (rs, is)) = (parse::range(re)?, parse::range(im)?, parse::steps(steps)?);
    if im.0 <= 0.0 {
        return Err(Failure::Usage("Im tau range must be positive".into()));
    }
    let config = BetaConfig {
        grid_size: grid,
        truncation: None,
    };
    let scan = abrikosov::beta_scan(re, im, rs, is, &config)?;
    let mut text = String::from("re_tau,im_tau,beta,beta_cell,in_fundamental_domain\n");
    for r in &scan.rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.re_tau,
            r.im_tau,
            r.beta,
            r.n4 / (r.n2 * r.n2),
            r.in_fundamental_domain
        ));
    }
    emit(out, &text)?;
    let best = scan.argmin();
    eprintln!("argmin re_tau={} im_tau={} beta={}", best.re_tau, best.im_tau, best.beta);
    Ok(())
}

pub fn minimize_beta(start: &str, tol: f64, grid: usize) -> CmdResult {
    let start = parse::tau(start)?;
    if !(tol > 0.0) {
        return Err(Failure::Usage("tolerance must be positive".into()));
    }
    let opts = MinimizeOptions {
        tol,
        config: BetaConfig {
            grid_size: grid,
            truncation: None,
        },
        ..MinimizeOptions::default()
    };
    let res = abrikosov::minimize_beta(start, &opts)?;
    let text = format!(
        "re_tau,im_tau,beta,gradient_norm,iterations\n{},{},{},{:e},{}\n",
        res.tau.re, res.tau.im, res.beta, res.gradient_norm, res.iterations
    );
    emit(None, &text)?;
    eprintln!("minimum at tau = {}{:+}i, beta = {}", res.tau.re, res.tau.im, res.beta);
    Ok(())
}

#[derive(Serialize)]
struct SampleRecord {
    t: f64,
    lambda: f64,
    mu: f64,
    b: f64,
    energy: f64,
    residual_psi: f64,
    residual_a: f64,
    current_gradient_residual: f64,
    newton_iterations: usize,
    tolerance: f64,
}

impl SampleRecord {
    fn new(s: &BranchSample, tol: f64) -> Self {
        Self {
            t: s.t,
            lambda: s.lambda,
            mu: s.mu,
            b: s.b,
            energy: s.energy,
            residual_psi: s.residual_psi,
            residual_a: s.residual_a,
            current_gradient_residual: s.current_gradient_residual,
            newton_iterations: s.newton_iterations,
            tolerance: tol,
        }
    }
}

#[derive(Serialize)]
struct BranchOutput {
    status: &'static str,
    message: String,
    kappa: f64,
    tau: [f64; 2],
    grid: usize,
    /// `int |psi0|^2` of the ground state amplitudes are measured against.
    reference_norm: f64,
    ground_eigenvalue: f64,
    g_lambda_prime0: f64,
    /// Coefficient of `t^2` in a fit of `lambda(t)`.
    fitted_slope: Option<f64>,
    samples: Vec<SampleRecord>,
    failure_index: Option<usize>,
}

pub struct BranchArgs {
    pub kappa: f64,
    pub tau: String,
    pub t: Option<String>,
    pub lambda: Option<String>,
    pub grid: usize,
    pub state: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn fitted_slope(samples: &[BranchSample]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples.iter().filter(|s| s.t > 0.0).map(|s| (s.t * s.t, s.lambda)).collect();
    if pts.len() < 2 {
        return None;
    }
    let degree = if pts.len() >= 4 { 2 } else { 1 };
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    solver::polyfit(&x, &y, degree).ok().map(|(c, _)| c[1])
}

pub fn branch(args: BranchArgs) -> CmdResult {
    let shape = shape_of(&args.tau)?;
    if !(args.kappa > 0.0) {
        return Err(Failure::Usage("kappa must be positive".into()));
    }
    let opts = SolverOptions {
        grid_size: args.grid,
        ..SolverOptions::default()
    };
    let (t_values, lambdas) = match (&args.t, &args.lambda) {
        (Some(t), None) => (Some(parse::list(t)?), None),
        (None, Some(l)) => (None, Some(parse::list(l)?)),
        (None, None) => (Some(parse::list("0:0.2:11")?), None),
        _ => unreachable!("clap rejects both"),
    };
    if let Some(ts) = &t_values {
        if ts.windows(2).any(|w| w[1] < w[0]) {
            return Err(Failure::Usage("amplitudes must be ascending".into()));
        }
    }
    let bif = Bifurcation::new(shape, args.kappa, opts)?;
    let mut failure = None;
    let mut samples = Vec::new();
    let mut skipped = Vec::new();
    match (t_values, lambdas) {
        (Some(ts), _) => {
            let run = bif.branch(&ts);
            samples = run.samples;
            failure = run.failure;
        }
        (_, Some(ls)) => {
            for (i, &l) in ls.iter().enumerate() {
                if l <= 1.0 {
                    // b >= kappa^2: no lattice solution bifurcates here.
                    skipped.push(l);
                    continue;
                }
                match bif.solve_at_lambda(l) {
                    Ok(s) => samples.push(s),
                    Err(e) => {
                        failure = Some((i, e));
                        break;
                    }
                }
            }
        }
        _ => unreachable!(),
    }
    let (status, message) = match (&failure, samples.is_empty()) {
        (Some((i, e)), _) => ("partial", format!("continuation failed at index {i}: {e}")),
        (None, true) if !skipped.is_empty() => (
            "no_branch",
            "no lattice solution exists near the normal state for lambda <= 1 (b >= kappa^2)".to_string(),
        ),
        (None, _) if !skipped.is_empty() => (
            "ok",
            format!("skipped lambda values {skipped:?}: no lattice solution for lambda <= 1"),
        ),
        _ => ("ok", String::new()),
    };
    let out = BranchOutput {
        status,
        message,
        kappa: args.kappa,
        tau: [shape.tau().re, shape.tau().im],
        grid: args.grid,
        reference_norm: opts.reference_norm,
        ground_eigenvalue: bif.ground_eigenvalue(),
        g_lambda_prime0: bif.g_lambda_prime0(),
        fitted_slope: fitted_slope(&samples),
        samples: samples.iter().map(|s| SampleRecord::new(s, opts.newton_tol)).collect(),
        failure_index: failure.as_ref().map(|(i, _)| *i),
    };
    emit(args.out.as_deref(), &json(&out))?;
    if let (Some(path), Some(last)) = (&args.state, samples.last()) {
        StateFile::from_normal_form(&last.psi, &last.a, args.kappa, last.lambda)?
            .with_provenance("command", "branch")
            .with_provenance("t", last.t)
            .with_provenance("residual_psi", format!("{:e}", last.residual_psi))
            .with_provenance("residual_a", format!("{:e}", last.residual_a))
            .write(path)?;
    }
    match failure {
        Some((_, e)) => Err(e.into()),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct CurveOutput {
    kappa: f64,
    tau: [f64; 2],
    grid: usize,
    samples: Vec<[f64; 2]>,
    coefficients: Vec<f64>,
    e0_fit: f64,
    e1_fit: f64,
    e2_fit: f64,
    e0_formula: f64,
    e1_formula: f64,
    /// Closed form `kappa^4 / (4 pi) - 1 / (1 + 4 pi (kappa^2 - 1/2) beta)` of the `mu^2` coefficient.
    e2_formula: f64,
    /// `mu^2` coefficient from expanding the energy with the normal-state term included.
    e2_expanded: f64,
    beta: f64,
    beta_cell: f64,
    fit_residual: f64,
    max_residual: f64,
    tolerance: f64,
}

pub fn energy_curve(kappa: f64, tau: &str, mu: &str, grid: usize, out: Option<&Path>) -> CmdResult {
    let shape = shape_of(tau)?;
    let mus = parse::list(mu)?;
    let opts = SolverOptions {
        grid_size: grid,
        ..SolverOptions::default()
    };
    let curve = solver::energy_curve(kappa, shape.tau(), &mus, opts)?;
    let b = abrikosov::beta_on_shape(shape, &BetaConfig::default())?;
    let k2 = kappa * kappa;
    let out_rec = CurveOutput {
        kappa,
        tau: [shape.tau().re, shape.tau().im],
        grid,
        samples: curve.samples.iter().map(|(m, e)| [*m, *e]).collect(),
        coefficients: curve.coefficients.clone(),
        e0_fit: curve.e0(),
        e1_fit: curve.e1(),
        e2_fit: curve.e2(),
        e0_formula: 0.5 * k2 + k2 * k2,
        e1_formula: -2.0 * k2,
        e2_formula: abrikosov::e2(kappa, b.beta_cell),
        e2_expanded: abrikosov::e2_expanded(kappa, b.beta_cell),
        beta: b.beta,
        beta_cell: b.beta_cell,
        fit_residual: curve.fit_residual,
        max_residual: curve.max_residual,
        tolerance: opts.newton_tol,
    };
    emit(out, &json(&out_rec))
}

#[derive(Serialize)]
struct GaugeOutput {
    flux: f64,
    constant_shift: [f64; 2],
    twist: [f64; 2],
    translation: [f64; 2],
    mean_a: f64,
    div_a: f64,
    projection_residual: f64,
    phase_condition: f64,
    boundary_mismatch: f64,
}

pub fn gauge_fix(input: &Path, output: &Path) -> CmdResult {
    let file = StateFile::read(input)?;
    let raw = file.raw_state()?;
    let (phi, h, rep) = gauge::fix_gauge(&raw)?;
    StateFile::from_normal_form(&phi, &h, file.kappa, file.lambda)?
        .with_provenance("command", "gauge-fix")
        .with_provenance("translation", format!("{},{}", rep.translation[0], rep.translation[1]))
        .with_provenance("phase_condition", format!("{:e}", rep.phase_condition))
        .write(output)?;
    let rec = GaugeOutput {
        flux: rep.flux,
        constant_shift: rep.constant_shift,
        twist: rep.twist,
        translation: rep.translation,
        mean_a: rep.mean_a,
        div_a: rep.div_a,
        projection_residual: rep.projection_residual,
        phase_condition: rep.phase_condition,
        boundary_mismatch: rep.boundary_mismatch,
    };
    emit(None, &json(&rec))
}
