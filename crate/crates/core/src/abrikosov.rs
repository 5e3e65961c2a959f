//! The Abrikosov function of a lattice shape and its minimization.
//!
//! For the lowest-Landau-level state `psi0` of a one-quantum cell (area `2 pi`),
//! `N2 = int |psi0|^2`, `N4 = int |psi0|^4`, and the shape functional is `N4 / N2^2`.
//! The conventional Abrikosov parameter is the same ratio times the cell area,
//! `<|psi|^4> / <|psi|^2>^2`, which is `1` for a constant density.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::GridSpec;
use crate::lattice::{normalize_shape, LatticeShape};
use crate::theta::ThetaState;

/// Quadrature settings for `beta` evaluations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaConfig {
    pub grid_size: usize,
    /// Theta truncation; `None` selects it from `Im tau`.
    pub truncation: Option<usize>,
}

impl Default for BetaConfig {
    fn default() -> Self {
        Self {
            grid_size: 128,
            truncation: Some(25),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaResult {
    /// Shape the value was computed on (fundamental-domain representative).
    pub tau: Complex64,
    /// Shape as requested.
    pub requested_tau: Complex64,
    /// True when the requested value had to be reduced to the fundamental domain.
    pub renormalized: bool,
    /// Area-normalized Abrikosov parameter `|cell| N4 / N2^2`.
    pub beta: f64,
    /// Cell functional `N4 / N2^2` entering the bifurcation and energy formulas.
    pub beta_cell: f64,
    pub n2: f64,
    pub n4: f64,
    pub grid_size: usize,
    pub truncation: usize,
}

/// Abrikosov function at `tau`, reduced to the fundamental domain first if needed.
pub fn beta(tau: Complex64, config: &BetaConfig) -> Result<BetaResult> {
    let shape = normalize_shape(tau)?;
    let mut res = beta_on_shape(LatticeShape::new(shape.tau())?, config)?;
    res.requested_tau = tau;
    res.renormalized = (shape.tau() - tau).norm() > 1e-14;
    Ok(res)
}

/// Abrikosov function evaluated on the cell of `shape` exactly as given.
pub fn beta_on_shape(shape: LatticeShape, config: &BetaConfig) -> Result<BetaResult> {
    let grid = GridSpec::uniform(shape, 1, config.grid_size)?;
    let mut st = ThetaState::new(shape, 1)?;
    if let Some(k) = config.truncation {
        st = st.with_truncation(k);
    }
    let psi = st.sample(&grid)?;
    let w = grid.quad_weight();
    let (mut s2, mut s4) = (0.0, 0.0);
    for v in psi.values() {
        let d = v.norm_sqr();
        s2 += d;
        s4 += d * d;
    }
    let (n2, n4) = (s2 * w, s4 * w);
    let beta_cell = n4 / (n2 * n2);
    Ok(BetaResult {
        tau: shape.tau(),
        requested_tau: shape.tau(),
        renormalized: false,
        beta: beta_cell * grid.cell_area(),
        beta_cell,
        n2,
        n4,
        grid_size: config.grid_size,
        truncation: st.truncation(),
    })
}

/// One row of a `beta` table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaScanRow {
    pub re_tau: f64,
    pub im_tau: f64,
    /// Whether the scan point lies in the fundamental domain; other points are
    /// evaluated on their fundamental-domain representative.
    pub in_fundamental_domain: bool,
    pub beta: f64,
    pub n2: f64,
    pub n4: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BetaScan {
    pub rows: Vec<BetaScanRow>,
    pub re_steps: usize,
    pub im_steps: usize,
    pub config: BetaConfig,
}

impl BetaScan {
    /// Row with the smallest `beta`.
    pub fn argmin(&self) -> &BetaScanRow {
        self.rows
            .iter()
            .min_by(|a, b| a.beta.partial_cmp(&b.beta).unwrap())
            .expect("scan is never empty")
    }
}

fn linspace(range: (f64, f64), steps: usize) -> Vec<f64> {
    if steps == 1 {
        return vec![range.0];
    }
    (0..steps)
        .map(|i| range.0 + (range.1 - range.0) * i as f64 / (steps - 1) as f64)
        .collect()
}

/// `beta` on a `re_steps x im_steps` rectangle; rows are ordered with `Re tau` fastest.
pub fn beta_scan(
    re_range: (f64, f64),
    im_range: (f64, f64),
    re_steps: usize,
    im_steps: usize,
    config: &BetaConfig,
) -> Result<BetaScan> {
    if re_steps == 0 || im_steps == 0 {
        return Err(Error::InvalidParameter("scan needs at least one point per axis".into()));
    }
    for ((lo, hi), steps) in [(re_range, re_steps), (im_range, im_steps)] {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() || (lo == hi && steps > 1) {
            return Err(Error::InvalidParameter(format!("empty or invalid range [{lo}, {hi}]")));
        }
    }
    if im_range.0 <= 0.0 {
        return Err(Error::InvalidParameter("Im tau must stay positive".into()));
    }
    let res = linspace(re_range, re_steps);
    let ims = linspace(im_range, im_steps);
    let points: Vec<(f64, f64)> = ims.iter().flat_map(|&y| res.iter().map(move |&x| (x, y))).collect();
    let rows = points
        .par_iter()
        .map(|&(x, y)| {
            let tau = Complex64::new(x, y);
            let b = beta(tau, config)?;
            Ok(BetaScanRow {
                re_tau: x,
                im_tau: y,
                in_fundamental_domain: crate::lattice::in_fundamental_domain(tau),
                beta: b.beta,
                n2: b.n2,
                n4: b.n4,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BetaScan {
        rows,
        re_steps,
        im_steps,
        config: *config,
    })
}

/// Central-difference gradient of `beta` in `(Re tau, Im tau)`, evaluated on the raw
/// (unreduced) cell so the stencil never straddles a fundamental-domain edge.
pub fn beta_gradient(tau: Complex64, h: f64, config: &BetaConfig) -> Result<[f64; 2]> {
    let f = |t: Complex64| -> Result<f64> { Ok(beta_on_shape(LatticeShape::new(t)?, config)?.beta) };
    let gx = (f(tau + h)? - f(tau - h)?) / (2.0 * h);
    let gy = (f(tau + Complex64::new(0.0, h))? - f(tau - Complex64::new(0.0, h))?) / (2.0 * h);
    Ok([gx, gy])
}

/// Finite-difference Hessian of `beta` in `(Re tau, Im tau)`.
pub fn beta_hessian(tau: Complex64, h: f64, config: &BetaConfig) -> Result<[[f64; 2]; 2]> {
    let f = |dx: f64, dy: f64| -> Result<f64> {
        Ok(beta_on_shape(LatticeShape::new(tau + Complex64::new(dx, dy))?, config)?.beta)
    };
    let f0 = f(0.0, 0.0)?;
    let fxx = (f(h, 0.0)? - 2.0 * f0 + f(-h, 0.0)?) / (h * h);
    let fyy = (f(0.0, h)? - 2.0 * f0 + f(0.0, -h)?) / (h * h);
    let fxy = (f(h, h)? - f(h, -h)? - f(-h, h)? + f(-h, -h)?) / (4.0 * h * h);
    Ok([[fxx, fxy], [fxy, fyy]])
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinimizeResult {
    /// Minimizer reduced to the fundamental domain.
    pub tau: Complex64,
    pub beta: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// Best vertex after every Nelder-Mead iteration, as raw `tau`.
    pub trace: Vec<Complex64>,
}

/// Options for [`minimize_beta`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MinimizeOptions {
    /// Gradient-norm tolerance for acceptance.
    pub tol: f64,
    pub max_iterations: usize,
    pub initial_step: f64,
    pub config: BetaConfig,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iterations: 500,
            initial_step: 0.05,
            config: BetaConfig {
                grid_size: 48,
                truncation: None,
            },
        }
    }
}

/// Finite-difference step for gradient checks.
pub const GRADIENT_STEP: f64 = 1e-4;

/// Nelder-Mead descent of `beta` over the upper half plane.
///
/// `beta` is a lattice invariant, so the simplex moves freely in the raw `tau` plane and
/// every vertex is evaluated on its fundamental-domain representative; the result is
/// reduced at the end.
pub fn minimize_beta(start: Complex64, opts: &MinimizeOptions) -> Result<MinimizeResult> {
    if !(start.im > 0.0) {
        return Err(Error::InvalidParameter("start must have Im tau > 0".into()));
    }
    let config = opts.config;
    let eval = |p: [f64; 2]| -> f64 {
        if p[1] <= 0.05 {
            return f64::INFINITY;
        }
        beta(Complex64::new(p[0], p[1]), &config).map(|b| b.beta).unwrap_or(f64::INFINITY)
    };
    let grad_norm = |t: Complex64| -> Result<f64> {
        let s = normalize_shape(t)?.tau();
        let g = beta_gradient(s, GRADIENT_STEP, &config)?;
        Ok(g[0].hypot(g[1]))
    };
    let g0 = grad_norm(start)?;
    if g0 <= opts.tol {
        let shape = normalize_shape(start)?;
        return Ok(MinimizeResult {
            tau: shape.tau(),
            beta: beta(start, &config)?.beta,
            gradient_norm: g0,
            iterations: 0,
            trace: vec![start],
        });
    }
    let s = opts.initial_step;
    let mut simplex = [[start.re, start.im], [start.re + s, start.im], [start.re, start.im + s]];
    let mut values = simplex.map(eval);
    let mut trace = Vec::new();
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        iterations += 1;
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        simplex = order.map(|i| simplex[i]);
        values = order.map(|i| values[i]);
        trace.push(Complex64::new(simplex[0][0], simplex[0][1]));
        let size = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (simplex[i][0] - simplex[j][0]).hypot(simplex[i][1] - simplex[j][1]))
            .fold(0.0, f64::max);
        if size < 1e-9 || (values[2] - values[0]).abs() < 1e-15 {
            break;
        }
        let centroid = [(simplex[0][0] + simplex[1][0]) / 2.0, (simplex[0][1] + simplex[1][1]) / 2.0];
        let along = |t: f64| [centroid[0] + t * (simplex[2][0] - centroid[0]), centroid[1] + t * (simplex[2][1] - centroid[1])];
        let xr = along(-1.0);
        let fr = eval(xr);
        if fr < values[0] {
            let xe = along(-2.0);
            let fe = eval(xe);
            if fe < fr {
                simplex[2] = xe;
                values[2] = fe;
            } else {
                simplex[2] = xr;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = xr;
            values[2] = fr;
        } else {
            let (xc, fc) = if fr < values[2] {
                let x = along(-0.5);
                (x, eval(x))
            } else {
                let x = along(0.5);
                (x, eval(x))
            };
            if fc < values[2].min(fr) {
                simplex[2] = xc;
                values[2] = fc;
            } else {
                for i in 1..3 {
                    simplex[i] = [
                        simplex[0][0] + 0.5 * (simplex[i][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[i][1] - simplex[0][1]),
                    ];
                    values[i] = eval(simplex[i]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap()).unwrap();
    let raw = Complex64::new(simplex[best][0], simplex[best][1]);
    let tau = snap_to_closed_domain(normalize_shape(raw)?.tau());
    let gn = grad_norm(tau)?;
    if gn > opts.tol.max(1e-4) {
        return Err(Error::NoConvergence {
            solver: "nelder-mead",
            iterations,
            residual: gn,
        });
    }
    Ok(MinimizeResult {
        tau,
        beta: values[best],
        gradient_norm: gn,
        iterations,
        trace,
    })
}

/// Numerical minimizers land within roundoff of the fundamental-domain edges; pick the
/// representative on the `Re tau >= 0` side of the identified edges.
fn snap_to_closed_domain(mut tau: Complex64) -> Complex64 {
    const EDGE: f64 = 1e-6;
    if tau.re < -0.5 + EDGE {
        tau += 1.0;
    }
    if tau.re < 0.0 && (tau.norm() - 1.0).abs() < EDGE {
        tau = -tau.conj();
    }
    tau
}

/// The closed form `kappa^4 / (4 pi) - 1 / (1 + 4 pi (kappa^2 - 1/2) beta)` for the `mu^2`
/// coefficient of the energy, with `beta` the cell functional. The computed energy does not
/// follow it; see [`e2_expanded`].
pub fn e2(kappa: f64, beta_cell: f64) -> f64 {
    let k2 = kappa * kappa;
    k2 * k2 / (4.0 * std::f64::consts::PI) - 1.0 / (1.0 + 4.0 * std::f64::consts::PI * (k2 - 0.5) * beta_cell)
}

/// `mu^2` coefficient obtained by expanding the rescaled energy directly:
/// `1 - 1 / (1 + 4 pi (kappa^2 - 1/2) beta)`.
pub fn e2_expanded(kappa: f64, beta_cell: f64) -> f64 {
    let k2 = kappa * kappa;
    1.0 - 1.0 / (1.0 + 4.0 * std::f64::consts::PI * (k2 - 0.5) * beta_cell)
}

/// A zero of the `beta` gradient located by the winding of the gradient field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticalPoint {
    /// Centre of the scan cell containing the zero.
    pub tau: Complex64,
    /// Poincare index: `+1` at extrema, `-1` at saddles.
    pub index: i32,
}

/// Critical points of `beta` inside a rectangle, from the winding of the gradient
/// around every cell of an `re_steps x im_steps` lattice of sample points.
pub fn critical_points(
    re_range: (f64, f64),
    im_range: (f64, f64),
    re_steps: usize,
    im_steps: usize,
    config: &BetaConfig,
) -> Result<Vec<CriticalPoint>> {
    if re_steps < 2 || im_steps < 2 {
        return Err(Error::InvalidParameter("critical-point scan needs at least 2x2 points".into()));
    }
    let res = linspace(re_range, re_steps);
    let ims = linspace(im_range, im_steps);
    let points: Vec<Complex64> = ims.iter().flat_map(|&y| res.iter().map(move |&x| Complex64::new(x, y))).collect();
    let grads = points
        .par_iter()
        .map(|&t| beta_gradient(t, GRADIENT_STEP, config))
        .collect::<Result<Vec<_>>>()?;
    let angle = |i: usize, j: usize| {
        let g = grads[i + re_steps * j];
        g[1].atan2(g[0])
    };
    let wrap = |d: f64| {
        let tp = 2.0 * std::f64::consts::PI;
        d - tp * (d / tp).round()
    };
    let mut out = Vec::new();
    for j in 0..im_steps - 1 {
        for i in 0..re_steps - 1 {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let mut total = 0.0;
            for e in 0..4 {
                let (a, b) = (corners[e], corners[(e + 1) % 4]);
                total += wrap(angle(b.0, b.1) - angle(a.0, a.1));
            }
            let index = (total / (2.0 * std::f64::consts::PI)).round() as i32;
            if index != 0 {
                out.push(CriticalPoint {
                    tau: Complex64::new((res[i] + res[i + 1]) / 2.0, (ims[j] + ims[j + 1]) / 2.0),
                    index,
                });
            }
        }
    }
    Ok(out)
}
