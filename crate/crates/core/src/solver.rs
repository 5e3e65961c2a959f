//! Lattice solutions of the rescaled Ginzburg-Landau equations near the bifurcation point.
//!
//! With `A = A0 + a` the equations read
//! `F(lambda, psi) = (L - lambda) psi + 2i a . grad_A0 psi + |a|^2 psi + kappa^2 |psi|^2 psi = 0`
//! and `(M + |psi|^2) a = Im(conj(psi) grad_A0 psi)`. The second is solved exactly for
//! `a = a(psi)` whenever `F` is evaluated, so Newton iterates on `psi` alone.
//!
//! Near the bifurcation `psi = s psi0 + w` with `psi0` the unit ground state of `L`
//! and `<psi0, w> = 0`. The `U(1)` orbit is fixed by taking `s` real.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{self, GaugePerturbation, GridSpec, QuasiPeriodicField, VectorField};
use crate::lattice::{FluxParameters, LatticeShape};
use crate::linalg::{self, SolveStats};
use crate::operators::{self, MagneticLaplacian, M_SOLVE_RTOL};
use crate::spectral::Spectral;
use crate::theta::ThetaState;

type C = Complex64;

/// Discretized Ginzburg-Landau system on one cell.
#[derive(Clone, Debug)]
pub struct GlSystem {
    grid: GridSpec,
    kappa: f64,
    lap: MagneticLaplacian,
    sp: Spectral,
    k2: Vec<f64>,
    /// `J^{-1}` for the step matrix `J = [delta1 delta2]`.
    step_inv: [[f64; 2]; 2],
}

impl GlSystem {
    pub fn new(grid: GridSpec, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
        }
        let sp = Spectral::new(grid);
        let k2 = sp.wavenumbers_sq();
        let m = grid.step_inverse_transpose();
        Ok(Self {
            grid,
            kappa,
            lap: MagneticLaplacian::new(grid),
            sp,
            k2,
            step_inv: [[m[0][0], m[1][0]], [m[0][1], m[1][1]]],
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn laplacian(&self) -> &MagneticLaplacian {
        &self.lap
    }

    pub fn spectral(&self) -> &Spectral {
        &self.sp
    }

    /// Supercurrent of the background connection, `Im(conj(psi) grad_A0 psi)`.
    pub fn current(&self, psi: &[C]) -> VectorField {
        let [gx, gy] = self.lap.gradient(psi);
        let mut j = VectorField::zeros(self.grid);
        for p in 0..psi.len() {
            j.x[p] = (psi[p].conj() * gx[p]).im;
            j.y[p] = (psi[p].conj() * gy[p]).im;
        }
        j
    }

    /// `a(psi)`, the solution of `(M + |psi|^2) a = Im(conj(psi) grad_A0 psi)`.
    pub fn solve_a(&self, psi: &[C]) -> Result<(GaugePerturbation, VectorField)> {
        let rho: Vec<f64> = psi.iter().map(|v| v.norm_sqr()).collect();
        let j = self.current(psi);
        let (g, _) = operators::solve_m_plus_density_stats(&rho, &j, &self.grid, None, M_SOLVE_RTOL)?;
        let a = g.potential();
        Ok((g, a))
    }

    /// `i (a . D psi + D . (a psi))` in step components, equal to `2i a . grad_A0 psi` for
    /// divergence-free `a` and Hermitian in `psi`.
    pub fn transport_term(&self, a: &VectorField, psi: &[C]) -> Vec<C> {
        let len = psi.len();
        let m = self.step_inv;
        let at0: Vec<f64> = (0..len).map(|p| m[0][0] * a.x[p] + m[0][1] * a.y[p]).collect();
        let at1: Vec<f64> = (0..len).map(|p| m[1][0] * a.x[p] + m[1][1] * a.y[p]).collect();
        let [d1, d2] = self.lap.step_derivatives(psi);
        let mut out: Vec<C> = (0..len).map(|p| d1[p] * at0[p] + d2[p] * at1[p]).collect();
        let st = self.lap.stencil();
        let mut tmp = vec![C::default(); len];
        let u0: Vec<C> = (0..len).map(|p| psi[p] * at0[p]).collect();
        st.first(0, &u0, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
        let u1: Vec<C> = (0..len).map(|p| psi[p] * at1[p]).collect();
        st.first(1, &u1, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
        out.iter_mut().for_each(|o| *o *= C::i());
        out
    }

    /// `F(lambda, psi)` for a given perturbation `a`.
    pub fn residual_with(&self, lambda: f64, psi: &[C], a: &VectorField) -> Vec<C> {
        let k2 = self.kappa * self.kappa;
        let lp = self.lap.apply(psi);
        let tr = self.transport_term(a, psi);
        (0..psi.len())
            .map(|p| {
                let a2 = a.x[p] * a.x[p] + a.y[p] * a.y[p];
                lp[p] - psi[p] * lambda + tr[p] + psi[p] * (a2 + k2 * psi[p].norm_sqr())
            })
            .collect()
    }

    /// `F(lambda, psi)` with `a = a(psi)`.
    pub fn residual(&self, lambda: f64, psi: &[C]) -> Result<Vec<C>> {
        let (_, a) = self.solve_a(psi)?;
        Ok(self.residual_with(lambda, psi, &a))
    }

    /// Derivative of `psi -> F(lambda, psi)` (with `a = a(psi)`) along `dpsi`, plus the
    /// `lambda` derivative `-dlambda psi`. Real-linear in `dpsi`.
    fn jacobian(&self, at: &Linearization, dpsi: &[C], dlambda: f64) -> Result<Vec<C>> {
        let len = dpsi.len();
        let psi = &at.psi;
        let a = &at.a;
        let gd = self.lap.gradient(dpsi);
        let mut rhs = VectorField::zeros(self.grid);
        for p in 0..len {
            let drho = 2.0 * (psi[p].conj() * dpsi[p]).re;
            rhs.x[p] = (dpsi[p].conj() * at.grad[0][p] + psi[p].conj() * gd[0][p]).im - drho * a.x[p];
            rhs.y[p] = (dpsi[p].conj() * at.grad[1][p] + psi[p].conj() * gd[1][p]).im - drho * a.y[p];
        }
        let (dg, _) = operators::solve_m_plus_density_stats(&at.rho, &rhs, &self.grid, None, M_SOLVE_RTOL)?;
        let da = dg.potential();
        let k2 = self.kappa * self.kappa;
        let ld = self.lap.apply(dpsi);
        let t1 = self.transport_term(a, dpsi);
        let t2 = self.transport_term(&da, psi);
        Ok((0..len)
            .map(|p| {
                let a2 = a.x[p] * a.x[p] + a.y[p] * a.y[p];
                let ada = a.x[p] * da.x[p] + a.y[p] * da.y[p];
                ld[p] - dpsi[p] * at.lambda
                    + t1[p]
                    + t2[p]
                    + psi[p] * (2.0 * ada)
                    + dpsi[p] * a2
                    + (dpsi[p] * (2.0 * at.rho[p]) + psi[p] * psi[p] * dpsi[p].conj()) * k2
                    - psi[p] * dlambda
            })
            .collect())
    }

    fn linearize(&self, lambda: f64, psi: Vec<C>) -> Result<Linearization> {
        let (_, a) = self.solve_a(&psi)?;
        let grad = self.lap.gradient(&psi);
        let rho = psi.iter().map(|v| v.norm_sqr()).collect();
        Ok(Linearization {
            lambda,
            psi,
            a,
            grad,
            rho,
        })
    }

    /// Rescaled energy per cell,
    /// `(kappa^4 / (|cell| lambda^2)) int |grad_A psi|^2 + (curl A)^2 + (kappa^2/2)(|psi|^2 - lambda/kappa^2)^2`,
    /// for `A = A0 + a` with any periodic `a`.
    pub fn energy(&self, psi: &[C], a: &VectorField, lambda: f64) -> f64 {
        let [gx, gy] = self.lap.gradient(psi);
        let curl_a = self.sp.curl(a);
        let b0 = self.grid.flux_density();
        let k2 = self.kappa * self.kappa;
        let mut sum = 0.0;
        for p in 0..psi.len() {
            let ex = gx[p] - C::i() * a.x[p] * psi[p];
            let ey = gy[p] - C::i() * a.y[p] * psi[p];
            let b = b0 + curl_a[p];
            let d = psi[p].norm_sqr() - lambda / k2;
            sum += ex.norm_sqr() + ey.norm_sqr() + b * b + 0.5 * k2 * d * d;
        }
        let w = self.grid.quad_weight();
        k2 * k2 / (self.grid.cell_area() * lambda * lambda) * sum * w
    }

    /// Residuals of the `a` equation `(M + |psi|^2) a - J`: the divergence-free part
    /// plus the mean (what the stream-function solve controls), and the gradient part.
    pub fn a_equation_residual(&self, psi: &[C], a: &VectorField) -> (f64, f64) {
        let j = self.current(psi);
        let c = self.sp.curl(a);
        let ma = self.sp.curl_star(&c);
        let mut r = VectorField::zeros(self.grid);
        for p in 0..psi.len() {
            let rho = psi[p].norm_sqr();
            r.x[p] = ma.x[p] + rho * a.x[p] - j.x[p];
            r.y[p] = ma.y[p] + rho * a.y[p] - j.y[p];
        }
        let mean = r.mean();
        let hr: Vec<f64> = self.sp.inverse_laplacian(&self.sp.curl(&r)).into_iter().map(|v| -v).collect();
        let solenoidal = self.sp.curl_star(&hr);
        let mut grad_part = VectorField::zeros(self.grid);
        let mut sol = solenoidal.clone();
        for p in 0..psi.len() {
            grad_part.x[p] = r.x[p] - solenoidal.x[p] - mean[0];
            grad_part.y[p] = r.y[p] - solenoidal.y[p] - mean[1];
            sol.x[p] += mean[0];
            sol.y[p] += mean[1];
        }
        (sol.norm(), grad_part.norm())
    }

    /// `Q (L - lambda) Q v = y` on the complement of `psi0`, preconditioned by the periodic
    /// inverse Laplacian.
    fn solve_complement(&self, psi0: &[C], lambda: f64, y: &[C], rtol: f64) -> Result<(Vec<C>, SolveStats)> {
        let project = |v: &mut Vec<C>| {
            let c = linalg::dot_c(psi0, v);
            v.iter_mut().zip(psi0).for_each(|(x, p)| *x -= c * p);
        };
        let apply = |v: &[C]| -> Vec<C> {
            let mut q = v.to_vec();
            project(&mut q);
            let lq = self.lap.apply(&q);
            let mut out: Vec<C> = lq.iter().zip(&q).map(|(l, x)| l - x * lambda).collect();
            project(&mut out);
            out
        };
        let shift = self.grid.flux_density();
        let precond = |r: &[C]| -> Vec<C> {
            let mut q = r.to_vec();
            project(&mut q);
            let mut spec = self.sp.forward_complex(&q);
            spec.iter_mut().zip(&self.k2).for_each(|(s, k)| *s /= k + shift);
            let mut out = self.sp.inverse_complex(spec);
            project(&mut out);
            out
        };
        let mut b = y.to_vec();
        project(&mut b);
        linalg::pcg_complex(apply, precond, &b, None, rtol, 5000)
    }
}

/// Everything the Jacobian needs at a linearization point.
struct Linearization {
    lambda: f64,
    psi: Vec<C>,
    a: VectorField,
    grad: [Vec<C>; 2],
    rho: Vec<f64>,
}

/// `a(psi)` for a field on its own grid, with `kappa` irrelevant.
pub fn solve_a(psi: &QuasiPeriodicField) -> Result<GaugePerturbation> {
    let sys = GlSystem::new(*psi.grid(), 1.0)?;
    Ok(sys.solve_a(psi.values())?.0)
}

/// `F(lambda, psi)` with `a = a(psi)`.
pub fn f_residual(lambda: f64, psi: &QuasiPeriodicField, kappa: f64) -> Result<QuasiPeriodicField> {
    let sys = GlSystem::new(*psi.grid(), kappa)?;
    QuasiPeriodicField::from_values(*psi.grid(), sys.residual(lambda, psi.values())?)
}

/// Rescaled energy of `(psi, A0 + a)`.
pub fn energy(psi: &QuasiPeriodicField, a: &VectorField, lambda: f64, kappa: f64) -> Result<f64> {
    psi.grid().check_same(a.grid())?;
    let sys = GlSystem::new(*psi.grid(), kappa)?;
    Ok(sys.energy(psi.values(), a, lambda))
}

/// Bifurcation slope `(kappa^2 - 1/2) N4 / N2 + N2 / (4 pi)` for the given `psi0`.
pub fn g_lambda_prime0(kappa: f64, psi0: &QuasiPeriodicField) -> f64 {
    let grid = psi0.grid();
    let d = psi0.density();
    let n2 = field::integrate(grid, &d);
    let n4 = field::integrate(grid, &d.iter().map(|x| x * x).collect::<Vec<_>>());
    (kappa * kappa - 0.5) * n4 / n2 + n2 / (4.0 * std::f64::consts::PI)
}

/// `N2 = 4 pi / (kappa^2 (1 + 4 pi (kappa^2 - 1/2) beta))`, the unique positive root of the
/// solvability relation `N2 / kappa^2 - (kappa^2 - 1/2) beta N2^2 - N2^2 / (4 pi) = 0`.
pub fn solvability_norm(kappa: f64, beta_cell: f64) -> Result<f64> {
    let k2 = kappa * kappa;
    let den = k2 * (1.0 + 4.0 * std::f64::consts::PI * (k2 - 0.5) * beta_cell);
    if !(den > 0.0) {
        return Err(Error::OutsideBranch(format!(
            "no positive normalization for kappa^2 = {k2}, beta = {beta_cell}"
        )));
    }
    Ok(4.0 * std::f64::consts::PI / den)
}

/// Theta ground state scaled so `int |psi0|^2` solves the solvability relation, making
/// `mu^{1/2} psi0` the leading term of the solution at distance `mu` below the critical field.
pub fn psi0_normalized(tau: Complex64, kappa: f64, grid: &GridSpec, k: Option<usize>) -> Result<QuasiPeriodicField> {
    if grid.n() != 1 {
        return Err(Error::InvalidParameter("normalized ground state needs n = 1".into()));
    }
    let shape = LatticeShape::new(tau)?;
    if (grid.shape().tau() - shape.tau()).norm() > 1e-12 {
        return Err(Error::GridMismatch);
    }
    let mut st = ThetaState::new(grid.shape(), 1)?;
    if let Some(k) = k {
        st = st.with_truncation(k);
    }
    let psi = st.sample(grid)?;
    let d = psi.density();
    let n2 = field::integrate(grid, &d);
    let n4 = field::integrate(grid, &d.iter().map(|x| x * x).collect::<Vec<_>>());
    let target = solvability_norm(kappa, n4 / (n2 * n2))?;
    Ok(psi.scaled(C::new((target / n2).sqrt(), 0.0)))
}

/// Settings shared by the branch, energy-curve and Newton drivers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverOptions {
    pub grid_size: usize,
    /// Newton stops once `||F||` (quadrature L2) is at or below this.
    pub newton_tol: f64,
    pub max_newton: usize,
    /// `int |psi0|^2` of the ground state against which amplitudes `t` are measured.
    pub reference_norm: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            grid_size: 32,
            newton_tol: 1e-10,
            max_newton: 40,
            reference_norm: 2.0 * std::f64::consts::PI,
        }
    }
}

/// A converged lattice solution.
#[derive(Clone, Debug)]
pub struct BranchSample {
    /// Amplitude `<psi0, psi>` with `psi0` in the recorded normalization.
    pub t: f64,
    pub lambda: f64,
    pub mu: f64,
    pub b: f64,
    pub psi: QuasiPeriodicField,
    pub a: GaugePerturbation,
    pub energy: f64,
    /// `||F(lambda, psi)||`.
    pub residual_psi: f64,
    /// Divergence-free and mean part of the `a`-equation residual.
    pub residual_a: f64,
    /// Gradient part of the `a`-equation residual, a discretization diagnostic that the
    /// stream-function representation does not control.
    pub current_gradient_residual: f64,
    pub newton_iterations: usize,
}

impl BranchSample {
    /// Larger of the two equation residuals.
    pub fn residual_norm(&self) -> f64 {
        self.residual_psi.max(self.residual_a)
    }
}

#[derive(Clone, Copy, Debug)]
enum Mode {
    /// Amplitude fixed, `lambda` unknown.
    Amplitude,
    /// `lambda` fixed, amplitude unknown.
    Lambda,
}

/// Result of the Lyapunov-Schmidt complement solve.
#[derive(Clone, Debug)]
pub struct LsSolution {
    pub w: QuasiPeriodicField,
    /// `<psi0, F(lambda, t psi0 + w)>` with the unit-norm ground state.
    pub gamma: Complex64,
    /// `||Q F||` at the returned `w`.
    pub q_residual: f64,
    pub iterations: usize,
}

/// Outcome of a Newton solve from an arbitrary start.
#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub sample: BranchSample,
    /// `|<psi0, psi>|` in the unit normalization.
    pub amplitude: f64,
}

/// The `n = 1` bifurcation problem on one lattice shape.
#[derive(Clone, Debug)]
pub struct Bifurcation {
    sys: GlSystem,
    psi0: Vec<C>,
    nu0: f64,
    opts: SolverOptions,
}

/// Branch samples computed before a failure, if any.
#[derive(Clone, Debug)]
pub struct BranchRun {
    pub samples: Vec<BranchSample>,
    pub failure: Option<(usize, Error)>,
}

impl Bifurcation {
    pub fn new(shape: LatticeShape, kappa: f64, opts: SolverOptions) -> Result<Self> {
        let grid = GridSpec::uniform(shape, 1, opts.grid_size)?;
        let sys = GlSystem::new(grid, kappa)?;
        let pairs = operators::eigs_l(sys.laplacian(), 1)?;
        let (nu0, ground) = pairs.into_iter().next().expect("one pair");
        let theta = ThetaState::new(shape, 1)?.sample(&grid)?;
        let c = theta.inner(&ground)?;
        let phase = if c.norm() > 0.0 { c.conj() / c.norm() } else { C::new(1.0, 0.0) };
        let psi0 = ground.values().iter().map(|v| v * phase).collect();
        Ok(Self { sys, psi0, nu0, opts })
    }

    pub fn system(&self) -> &GlSystem {
        &self.sys
    }

    pub fn grid(&self) -> &GridSpec {
        self.sys.grid()
    }

    pub fn options(&self) -> &SolverOptions {
        &self.opts
    }

    /// Lowest eigenvalue of the discrete `L`, the bifurcation point in `lambda`.
    pub fn ground_eigenvalue(&self) -> f64 {
        self.nu0
    }

    /// Unit-norm discrete ground state, phase-aligned with the theta state.
    pub fn unit_ground_state(&self) -> QuasiPeriodicField {
        QuasiPeriodicField::from_values(*self.grid(), self.psi0.clone()).expect("sized")
    }

    /// Ground state in the recorded normalization `int |psi0|^2 = reference_norm`.
    pub fn psi0(&self) -> QuasiPeriodicField {
        self.unit_ground_state().scaled(C::new(self.amplitude_scale(), 0.0))
    }

    fn amplitude_scale(&self) -> f64 {
        self.opts.reference_norm.sqrt()
    }

    /// `g'(0)` for the recorded ground state.
    pub fn g_lambda_prime0(&self) -> f64 {
        g_lambda_prime0(self.sys.kappa(), &self.psi0())
    }

    fn unit_slope(&self) -> f64 {
        g_lambda_prime0(self.sys.kappa(), &self.unit_ground_state())
    }

    fn inner(&self, v: &[C]) -> C {
        field::inner(self.grid(), &self.psi0, v)
    }

    fn project_q(&self, v: &mut [C]) {
        let c = self.inner(v);
        v.iter_mut().zip(&self.psi0).for_each(|(x, p)| *x -= c * p);
    }

    fn assemble(&self, s: f64, w: &[C]) -> Vec<C> {
        w.iter().zip(&self.psi0).map(|(x, p)| x + p * s).collect()
    }

    /// `w` solving `Q F(lambda, s psi0 + w) = 0` by the contraction
    /// `w = -(Q (L - lambda) Q)^{-1} Q N(s psi0 + w)`, and the reduced function `gamma`.
    ///
    /// `t` is measured in the recorded normalization.
    pub fn ls_solve_w(&self, lambda: f64, t: f64) -> Result<LsSolution> {
        let s = t * self.amplitude_scale();
        let len = self.grid().len();
        let mut w = vec![C::default(); len];
        let unit_psi0 = self.psi0.iter().map(|p| p * self.grid().quad_weight().sqrt()).collect::<Vec<_>>();
        let mut iterations = 0;
        loop {
            iterations += 1;
            let psi = self.assemble(s, &w);
            let (_, a) = self.sys.solve_a(&psi)?;
            let f = self.sys.residual_with(lambda, &psi, &a);
            let lp = self.sys.lap.apply(&psi);
            let nonlinear: Vec<C> = (0..len).map(|p| f[p] - (lp[p] - psi[p] * lambda)).collect();
            let rhs: Vec<C> = nonlinear.iter().map(|v| -v).collect();
            let (w_new, _) = self.sys.solve_complement(&unit_psi0, lambda, &rhs, 1e-14)?;
            let change = field::norm_sq(self.grid(), &w_new.iter().zip(&w).map(|(a, b)| a - b).collect::<Vec<_>>()).sqrt();
            w = w_new;
            if change <= 1e-14 * s.abs().max(1e-300) || change == 0.0 {
                break;
            }
            if iterations >= 200 {
                return Err(Error::NoConvergence { solver: "lyapunov-schmidt fixed point", iterations, residual: change });
            }
        }
        self.project_q(&mut w);
        let psi = self.assemble(s, &w);
        let (_, a) = self.sys.solve_a(&psi)?;
        let mut f = self.sys.residual_with(lambda, &psi, &a);
        let gamma = self.inner(&f);
        self.project_q(&mut f);
        Ok(LsSolution {
            w: QuasiPeriodicField::from_values(*self.grid(), w)?,
            gamma,
            q_residual: field::norm_sq(self.grid(), &f).sqrt(),
            iterations,
        })
    }

    /// Newton on `(w, p)` with `p` the free one of `lambda` and `s`.
    fn newton(&self, mode: Mode, mut s: f64, mut lambda: f64, mut w: Vec<C>) -> Result<(f64, f64, Vec<C>, usize)> {
        let grid = *self.grid();
        let len = grid.len();
        let sw = grid.quad_weight().sqrt();
        // Euclidean-unit ground state, so projections below are plain dot products.
        let e0: Vec<C> = self.psi0.iter().map(|p| p * sw).collect();
        self.project_q(&mut w);
        let mut residual = f64::INFINITY;
        for it in 0..=self.opts.max_newton {
            let psi = self.assemble(s, &w);
            let lin = self.sys.linearize(lambda, psi)?;
            let f = self.sys.residual_with(lambda, &lin.psi, &lin.a);
            residual = field::norm_sq(&grid, &f).sqrt();
            if residual <= self.opts.newton_tol {
                return Ok((s, lambda, w, it));
            }
            if it == self.opts.max_newton {
                break;
            }
            let split = |v: &[f64]| -> (Vec<C>, f64) {
                let c: Vec<C> = (0..len).map(|p| C::new(v[2 * p], v[2 * p + 1])).collect();
                (c, v[2 * len])
            };
            let pack = |c: &[C], p: f64| -> Vec<f64> {
                let mut out = Vec::with_capacity(2 * len + 1);
                for v in c {
                    out.push(v.re);
                    out.push(v.im);
                }
                out.push(p);
                out
            };
            let proj = |v: &mut [C]| -> C {
                let c = linalg::dot_c(&e0, v);
                v.iter_mut().zip(&e0).for_each(|(x, p)| *x -= c * p);
                c
            };
            let jac_err = std::cell::RefCell::new(None);
            let apply = |x: &[f64]| -> Vec<f64> {
                let (mut dw, dp) = split(x);
                let c = proj(&mut dw);
                let (dpsi, dl) = match mode {
                    Mode::Amplitude => (dw, dp),
                    Mode::Lambda => {
                        let v: Vec<C> = dw.iter().zip(&self.psi0).map(|(a, p)| a + p * dp).collect();
                        (v, 0.0)
                    }
                };
                let mut df = match self.sys.jacobian(&lin, &dpsi, dl) {
                    Ok(v) => v,
                    Err(e) => {
                        *jac_err.borrow_mut() = Some(e);
                        vec![C::default(); len]
                    }
                };
                let g = proj(&mut df);
                df.iter_mut().zip(&e0).for_each(|(x, p)| *x += c * p);
                pack(&df, g.re)
            };
            // Diagonal entry of the parameter column, for the preconditioner.
            let mut unit = vec![0.0; 2 * len + 1];
            unit[2 * len] = 1.0;
            let jpp = apply(&unit)[2 * len];
            let jpp = if jpp.abs() > 1e-14 { jpp } else { 1.0 };
            let precond = |y: &[f64]| -> Vec<f64> {
                let (mut yc, yp) = split(y);
                let c = proj(&mut yc);
                let z = match self.sys.solve_complement(&e0, lambda, &yc, 1e-6) {
                    Ok((z, _)) => z,
                    Err(_) => yc.clone(),
                };
                let z: Vec<C> = z.iter().zip(&e0).map(|(v, p)| v + c * p).collect();
                pack(&z, yp / jpp)
            };
            let mut fq = f.clone();
            let g = proj(&mut fq);
            let rhs: Vec<f64> = pack(&fq, g.re).into_iter().map(|v| -v).collect();
            let (dx, _) = linalg::fgmres(&apply, precond, &rhs, 1e-9, 40, 400)?;
            if let Some(e) = jac_err.into_inner() {
                return Err(e);
            }
            let (mut dw, dp) = split(&dx);
            proj(&mut dw);
            // Backtracking on the residual norm.
            let mut step = 1.0;
            loop {
                let w_try: Vec<C> = w.iter().zip(&dw).map(|(a, b)| a + b * step).collect();
                let (s_try, l_try) = match mode {
                    Mode::Amplitude => (s, lambda + step * dp),
                    Mode::Lambda => (s + step * dp, lambda),
                };
                let psi_try = self.assemble(s_try, &w_try);
                let r_try = field::norm_sq(&grid, &self.sys.residual(l_try, &psi_try)?).sqrt();
                if r_try < residual || step < 1e-3 {
                    w = w_try;
                    s = s_try;
                    lambda = l_try;
                    break;
                }
                step *= 0.5;
            }
        }
        Err(Error::NoConvergence { solver: "newton", iterations: self.opts.max_newton, residual })
    }

    fn sample(&self, s: f64, lambda: f64, w: &[C], iterations: usize) -> Result<BranchSample> {
        let psi = self.assemble(s, w);
        let (g, a) = self.sys.solve_a(&psi)?;
        let f = self.sys.residual_with(lambda, &psi, &a);
        let (residual_a, current_gradient_residual) = self.sys.a_equation_residual(&psi, &a);
        let kappa = self.sys.kappa();
        let fp = FluxParameters::from_lambda(1, lambda, kappa)?;
        Ok(BranchSample {
            t: s / self.amplitude_scale(),
            lambda,
            mu: fp.mu(),
            b: fp.b,
            energy: self.sys.energy(&psi, &a, lambda),
            residual_psi: field::norm_sq(self.grid(), &f).sqrt(),
            residual_a,
            current_gradient_residual,
            psi: QuasiPeriodicField::from_values(*self.grid(), psi)?,
            a: g,
            newton_iterations: iterations,
        })
    }

    /// The normal state at `lambda`.
    pub fn normal_sample(&self, lambda: f64) -> Result<BranchSample> {
        self.sample(0.0, lambda, &vec![C::default(); self.grid().len()], 0)
    }

    /// Solution with amplitude `t` (recorded normalization), `lambda` unknown.
    pub fn solve_at_amplitude(&self, t: f64, lambda_guess: Option<f64>, w_guess: Option<&[C]>) -> Result<BranchSample> {
        if t == 0.0 {
            return self.normal_sample(1.0);
        }
        let s = t * self.amplitude_scale();
        let lambda0 = lambda_guess.unwrap_or(self.nu0 + self.unit_slope() * s * s);
        let w0 = w_guess.map(|w| w.to_vec()).unwrap_or_else(|| vec![C::default(); self.grid().len()]);
        let (s, lambda, w, it) = self.newton(Mode::Amplitude, s, lambda0, w0)?;
        self.sample(s, lambda, &w, it)
    }

    /// Solution at fixed `lambda` on the bifurcating branch.
    pub fn solve_at_lambda(&self, lambda: f64) -> Result<BranchSample> {
        if !(lambda > self.nu0) {
            return Err(Error::OutsideBranch(format!(
                "lambda = {lambda} is not above the bifurcation point {}",
                self.nu0
            )));
        }
        let s0 = ((lambda - self.nu0) / self.unit_slope()).sqrt();
        let (s, lambda, w, it) = self.newton(Mode::Lambda, s0, lambda, vec![C::default(); self.grid().len()])?;
        self.sample(s, lambda, &w, it)
    }

    /// Newton at fixed `lambda` from an arbitrary start; the start is rotated so that
    /// `<psi0, psi>` is real and non-negative.
    pub fn newton_from(&self, lambda: f64, start: &QuasiPeriodicField) -> Result<NewtonOutcome> {
        self.grid().check_same(start.grid())?;
        let c = self.inner(start.values());
        let phase = if c.norm() > 0.0 { c.conj() / c.norm() } else { C::new(1.0, 0.0) };
        let mut w: Vec<C> = start.values().iter().map(|v| v * phase).collect();
        self.project_q(&mut w);
        let (s, lambda, w, it) = self.newton(Mode::Lambda, c.norm(), lambda, w)?;
        let sample = self.sample(s, lambda, &w, it)?;
        Ok(NewtonOutcome { sample, amplitude: s.abs() })
    }

    /// Continuation along ascending amplitudes, warm-starting every solve.
    pub fn branch(&self, t_values: &[f64]) -> BranchRun {
        let mut samples: Vec<BranchSample> = Vec::new();
        let mut prev: Vec<(f64, f64, Vec<C>)> = Vec::new();
        for (i, &t) in t_values.iter().enumerate() {
            if t < 0.0 || !t.is_finite() {
                return BranchRun {
                    samples,
                    failure: Some((i, Error::InvalidParameter(format!("amplitude must be non-negative, got {t}")))),
                };
            }
            if t == 0.0 {
                match self.normal_sample(1.0) {
                    Ok(smp) => samples.push(smp),
                    Err(e) => return BranchRun { samples, failure: Some((i, e)) },
                }
                continue;
            }
            let s = t * self.amplitude_scale();
            let (lambda_guess, w_guess) = match prev.as_slice() {
                [.., (s1, l1, w1)] => {
                    // lambda is even in s: extrapolate linearly in s^2 through the bifurcation point.
                    let slope = (l1 - self.nu0) / (s1 * s1);
                    let scale = (s / s1).powi(3);
                    (Some(self.nu0 + slope * s * s), Some(w1.iter().map(|v| v * scale).collect::<Vec<_>>()))
                }
                [] => (None, None),
            };
            match self.solve_at_amplitude(t, lambda_guess, w_guess.as_deref()) {
                Ok(smp) => {
                    let mut w = smp.psi.values().to_vec();
                    self.project_q(&mut w);
                    prev.push((s, smp.lambda, w));
                    samples.push(smp);
                }
                Err(e) => return BranchRun { samples, failure: Some((i, e)) },
            }
        }
        BranchRun { samples, failure: None }
    }
}

/// Energy as a function of `mu` along one lattice shape, with a polynomial fit.
#[derive(Clone, Debug)]
pub struct EnergyCurve {
    pub tau: Complex64,
    pub kappa: f64,
    /// `(mu, energy)` pairs.
    pub samples: Vec<(f64, f64)>,
    /// Fitted coefficients `e0, e1, e2, ...` of `sum e_k mu^k`.
    pub coefficients: Vec<f64>,
    /// Largest absolute deviation of the samples from the fit.
    pub fit_residual: f64,
    /// Largest Newton residual among the samples.
    pub max_residual: f64,
}

impl EnergyCurve {
    pub fn e0(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn e1(&self) -> f64 {
        self.coefficients[1]
    }

    pub fn e2(&self) -> f64 {
        self.coefficients[2]
    }
}

/// Least-squares polynomial fit of the given degree; returns coefficients and max deviation.
pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<(Vec<f64>, f64)> {
    if x.len() != y.len() || x.len() <= degree {
        return Err(Error::InvalidParameter(format!(
            "need more than {degree} samples for a degree-{degree} fit, got {}",
            x.len()
        )));
    }
    // Scale the abscissa for conditioning.
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let a = DMatrix::from_fn(x.len(), degree + 1, |i, j| (x[i] / scale).powi(j as i32));
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let c = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::InvalidParameter(format!("polynomial fit failed: {e}")))?;
    let coeffs: Vec<f64> = (0..=degree).map(|j| c[j] / scale.powi(j as i32)).collect();
    let fitted = &a * &c;
    let dev = (0..x.len()).map(|i| (fitted[i] - y[i]).abs()).fold(0.0, f64::max);
    Ok((coeffs, dev))
}

/// Energy curve at the given `mu` values, each point solved at `lambda = kappa^2 / (kappa^2 - mu)`.
///
/// A cubic is fitted when there are at least five samples, a quadratic otherwise.
pub fn energy_curve(kappa: f64, tau: Complex64, mu_values: &[f64], opts: SolverOptions) -> Result<EnergyCurve> {
    let k2 = kappa * kappa;
    if mu_values.len() < 3 {
        return Err(Error::InvalidParameter("energy curve needs at least three mu values".into()));
    }
    let bif = Bifurcation::new(LatticeShape::new(tau)?, kappa, opts)?;
    let mut samples = Vec::with_capacity(mu_values.len());
    let mut max_residual = 0.0f64;
    for &mu in mu_values {
        if !(mu > 0.0 && mu < k2) {
            return Err(Error::OutsideBranch(format!("mu = {mu} must lie in (0, kappa^2)")));
        }
        let smp = bif.solve_at_lambda(k2 / (k2 - mu))?;
        max_residual = max_residual.max(smp.residual_psi);
        samples.push((mu, smp.energy));
    }
    let degree = if samples.len() >= 5 { 3 } else { 2 };
    let (xs, ys): (Vec<f64>, Vec<f64>) = samples.iter().cloned().unzip();
    let (coefficients, fit_residual) = polyfit(&xs, &ys, degree)?;
    Ok(EnergyCurve {
        tau,
        kappa,
        samples,
        coefficients,
        fit_residual,
        max_residual,
    })
}

/// Branch through the default solver settings.
pub fn branch(kappa: f64, tau: Complex64, t_values: &[f64], opts: SolverOptions) -> Result<BranchRun> {
    let bif = Bifurcation::new(LatticeShape::new(tau)?, kappa, opts)?;
    Ok(bif.branch(t_values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small() -> SolverOptions {
        SolverOptions {
            grid_size: 16,
            ..SolverOptions::default()
        }
    }

    fn random_field(grid: &GridSpec, seed: u64, scale: f64) -> Vec<C> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Smooth random field: theta state times a random low-mode periodic factor.
        let base = ThetaState::new(grid.shape(), grid.n()).unwrap().sample(grid).unwrap();
        let (c1, c2, c3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
        let m = grid.lattice_inverse_transpose();
        let tp = 2.0 * std::f64::consts::PI;
        (0..grid.len())
            .map(|p| {
                let x = grid.point_at(p);
                let g1 = tp * (m[0][0] * x[0] + m[1][0] * x[1]);
                let g2 = tp * (m[0][1] * x[0] + m[1][1] * x[1]);
                let f = C::new(1.0 + c1 * g1.sin(), c2 * g2.cos() + c3 * (g1 + g2).sin());
                base.values()[p] * f * scale
            })
            .collect()
    }

    #[test]
    fn residual_vanishes_on_the_normal_state() {
        let grid = GridSpec::uniform(LatticeShape::square(), 1, 16).unwrap();
        let sys = GlSystem::new(grid, 1.0).unwrap();
        let f = sys.residual(1.3, &vec![C::default(); grid.len()]).unwrap();
        assert!(f.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn residual_is_equivariant_and_real_against_psi() {
        let grid = GridSpec::uniform(LatticeShape::triangular(), 1, 16).unwrap();
        let sys = GlSystem::new(grid, 1.2).unwrap();
        let psi = random_field(&grid, 1, 0.4);
        let f = sys.residual(1.1, &psi).unwrap();
        let im = field::inner(&grid, &psi, &f).im.abs();
        let scale = field::norm_sq(&grid, &psi).sqrt() * field::norm_sq(&grid, &f).sqrt();
        assert!(im <= 1e-12 * scale, "{im} vs {scale}");
        let rot = C::from_polar(1.0, 1.3);
        let psi_r: Vec<C> = psi.iter().map(|v| v * rot).collect();
        let f_r = sys.residual(1.1, &psi_r).unwrap();
        let diff: f64 = f_r.iter().zip(&f).map(|(a, b)| (a - b * rot).norm()).fold(0.0, f64::max);
        assert!(diff < 1e-11);
    }

    #[test]
    fn a_is_phase_invariant_and_vanishes_at_zero() {
        let grid = GridSpec::uniform(LatticeShape::square(), 1, 16).unwrap();
        let sys = GlSystem::new(grid, 1.0).unwrap();
        let psi = random_field(&grid, 2, 0.5);
        let (g1, _) = sys.solve_a(&psi).unwrap();
        let rot = C::from_polar(1.0, 1.3);
        let (g2, _) = sys.solve_a(&psi.iter().map(|v| v * rot).collect::<Vec<_>>()).unwrap();
        let d = g1.stream().iter().zip(g2.stream()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(d < 1e-12);
        let (g0, _) = sys.solve_a(&vec![C::default(); grid.len()]).unwrap();
        assert!(g0.stream().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let grid = GridSpec::uniform(LatticeShape::triangular(), 1, 16).unwrap();
        let sys = GlSystem::new(grid, 1.3).unwrap();
        let psi = random_field(&grid, 3, 0.3);
        let dpsi = random_field(&grid, 4, 1.0);
        let lambda = 1.1;
        let lin = sys.linearize(lambda, psi.clone()).unwrap();
        let jd = sys.jacobian(&lin, &dpsi, 0.2).unwrap();
        let eps = 1e-6;
        let plus: Vec<C> = psi.iter().zip(&dpsi).map(|(a, b)| a + b * eps).collect();
        let minus: Vec<C> = psi.iter().zip(&dpsi).map(|(a, b)| a - b * eps).collect();
        let fp = sys.residual(lambda + 0.2 * eps, &plus).unwrap();
        let fm = sys.residual(lambda - 0.2 * eps, &minus).unwrap();
        let fd: Vec<C> = fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let err = linalg::norm_c(&fd.iter().zip(&jd).map(|(a, b)| a - b).collect::<Vec<_>>());
        assert!(err <= 1e-6 * linalg::norm_c(&jd), "{err}");
    }

    #[test]
    fn normal_energy_matches_closed_form() {
        let grid = GridSpec::uniform(LatticeShape::square(), 1, 16).unwrap();
        let sys = GlSystem::new(grid, 1.5).unwrap();
        let k2: f64 = 2.25;
        for lambda in [1.0, 1.2] {
            let e = sys.energy(&vec![C::default(); grid.len()], &VectorField::zeros(grid), lambda);
            let expect = k2 * k2 / (lambda * lambda) + k2 / 2.0;
            assert!((e - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn solvability_norm_solves_its_relation() {
        let (k, beta) = (1.2f64, 0.1846);
        let n2 = solvability_norm(k, beta).unwrap();
        let k2 = k * k;
        let r = n2 / k2 - (k2 - 0.5) * beta * n2 * n2 - n2 * n2 / (4.0 * std::f64::consts::PI);
        assert!(r.abs() < 1e-14);
    }

    #[test]
    fn ls_solution_is_trivial_at_zero_amplitude() {
        let bif = Bifurcation::new(LatticeShape::square(), 1.0, small()).unwrap();
        let ls = bif.ls_solve_w(1.05, 0.0).unwrap();
        assert!(ls.gamma.norm() == 0.0);
        assert!(ls.w.values().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn branch_point_solves_the_equations() {
        let bif = Bifurcation::new(LatticeShape::triangular(), 1.0, small()).unwrap();
        let smp = bif.solve_at_amplitude(0.1, None, None).unwrap();
        assert!(smp.residual_psi <= 1e-10);
        assert!(smp.lambda > bif.ground_eigenvalue());
    }

    #[test]
    fn polyfit_recovers_a_cubic() {
        let xs: Vec<f64> = (1..=6).map(|i| i as f64 * 1e-3).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.5 - 2.0 * x + 0.7 * x * x + 3.0 * x * x * x).collect();
        let (c, dev) = polyfit(&xs, &ys, 3).unwrap();
        assert!((c[0] - 1.5).abs() < 1e-12 && (c[1] + 2.0).abs() < 1e-9 && (c[2] - 0.7).abs() < 1e-5);
        assert!(dev < 1e-12);
    }
}
