//! Gauge fixing of lattice states into normal form.
//!
//! A raw state `(psi, A)` is accepted when `A - A0` is periodic on the cell; `psi` may then
//! carry an arbitrary constant twist in its quasi-periodicity. The normal form has
//! `A = A0 + curl* h` (periodic, mean zero, divergence free) and `psi` quasi-periodic
//! with zero twist, reached by a gauge transformation followed by a translation.
//!
//! Along a line parallel to a lattice vector the background phase of a quasi-periodic
//! field is constant, so each line is a Bloch function and can be periodized exactly.
//! Twist estimation and fractional translations both work line by line on that basis.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::{self, GaugePerturbation, GridSpec, QuasiPeriodicField, VectorField};
use crate::lattice;
use crate::spectral::Spectral;
use crate::stencil;

type C = Complex64;

/// Relative tolerance on the cell flux `2 pi n`.
pub const FLUX_TOL: f64 = 1e-6;

/// Order parameter and full vector potential sampled on one cell, in any gauge.
#[derive(Clone, Debug, PartialEq)]
pub struct RawLatticeState {
    grid: GridSpec,
    pub psi: Vec<C>,
    /// Full vector potential `A`, not the perturbation.
    pub a: VectorField,
}

impl RawLatticeState {
    pub fn new(grid: GridSpec, psi: Vec<C>, a: VectorField) -> Result<Self> {
        if psi.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        grid.check_same(a.grid())?;
        Ok(Self { grid, psi, a })
    }

    /// The state `(psi, A0 + curl* h)` of a normal-form pair.
    pub fn from_normal_form(psi: &QuasiPeriodicField, h: &GaugePerturbation) -> Result<Self> {
        let grid = *psi.grid();
        grid.check_same(h.grid())?;
        let mut a = h.potential();
        let a0 = background_potential(&grid);
        for p in 0..grid.len() {
            a.x[p] += a0.x[p];
            a.y[p] += a0.y[p];
        }
        Self::new(grid, psi.values().to_vec(), a)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// `A - A0`.
    pub fn perturbation(&self) -> VectorField {
        let a0 = background_potential(&self.grid);
        let mut out = self.a.clone();
        for p in 0..self.grid.len() {
            out.x[p] -= a0.x[p];
            out.y[p] -= a0.y[p];
        }
        out
    }

    /// Pointwise `curl A`.
    pub fn magnetic_field(&self) -> Vec<f64> {
        let b = self.grid.flux_density();
        Spectral::new(self.grid).curl(&self.perturbation()).into_iter().map(|c| b + c).collect()
    }

    /// Twist of `psi` relative to the zero-twist background cocycle.
    pub fn twist(&self) -> [f64; 2] {
        estimate_twist(&self.grid, &self.psi)
    }

    /// `(psi e^{i chi}, A + grad chi)` for a periodic `chi`.
    pub fn gauge_transformed(&self, chi: &[f64]) -> Result<Self> {
        if chi.len() != self.grid.len() {
            return Err(Error::GridMismatch);
        }
        let g = Spectral::new(self.grid).gradient(chi);
        let psi = self.psi.iter().zip(chi).map(|(v, c)| v * C::from_polar(1.0, *c)).collect();
        let mut a = self.a.clone();
        for p in 0..self.grid.len() {
            a.x[p] += g.x[p];
            a.y[p] += g.y[p];
        }
        Self::new(self.grid, psi, a)
    }

    /// `(psi, A + c)` for a constant `c`, i.e. the gauge `chi = c . x`.
    pub fn with_constant_shift(&self, c: [f64; 2]) -> Self {
        let mut out = self.clone();
        for p in 0..self.grid.len() {
            let x = self.grid.point_at(p);
            out.psi[p] *= C::from_polar(1.0, c[0] * x[0] + c[1] * x[1]);
            out.a.x[p] += c[0];
            out.a.y[p] += c[1];
        }
        out
    }

    /// `(psi(x + l), A(x + l))`, no gauge correction.
    pub fn translated(&self, l: [f64; 2]) -> Self {
        let twist = self.twist();
        let psi = translate_values(&self.grid, &self.psi, twist, l);
        let sp = Spectral::new(self.grid);
        let pert = self.perturbation();
        // A0(x + l) = A0(x) + (b/2)(-l2, l1).
        let half_b = 0.5 * self.grid.flux_density();
        let px = sp.shift(&pert.x, l);
        let py = sp.shift(&pert.y, l);
        let a0 = background_potential(&self.grid);
        let a = VectorField::from_components(
            self.grid,
            (0..self.grid.len()).map(|p| a0.x[p] - half_b * l[1] + px[p]).collect(),
            (0..self.grid.len()).map(|p| a0.y[p] + half_b * l[0] + py[p]).collect(),
        )
        .expect("grid sized");
        Self { grid: self.grid, psi, a }
    }

    /// Rescaled energy of the state, with derivatives taken spectrally along lattice lines.
    pub fn energy(&self, kappa: f64, lambda: f64) -> f64 {
        let [gx, gy] = line_gradient(&self.grid, &self.psi, self.twist());
        let bfield = self.magnetic_field();
        let k2 = kappa * kappa;
        let mut sum = 0.0;
        for p in 0..self.grid.len() {
            let ex = gx[p] - C::i() * self.a.x[p] * self.psi[p];
            let ey = gy[p] - C::i() * self.a.y[p] * self.psi[p];
            let d = self.psi[p].norm_sqr() - lambda / k2;
            sum += ex.norm_sqr() + ey.norm_sqr() + bfield[p] * bfield[p] + 0.5 * k2 * d * d;
        }
        k2 * k2 / (self.grid.cell_area() * lambda * lambda) * sum * self.grid.quad_weight()
    }
}

/// `A0 = (b/2)(-x2, x1)` on the grid.
pub fn background_potential(grid: &GridSpec) -> VectorField {
    let half_b = 0.5 * grid.flux_density();
    VectorField::from_fn(*grid, |x| [-half_b * x[1], half_b * x[0]])
}

/// What `fix_gauge` did and how well the output meets the normal-form conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugeFixReport {
    /// Cell flux of the input.
    pub flux: f64,
    /// Gradient of the applied gauge function (the function itself is multivalued).
    pub eta_gradient: VectorField,
    /// Constant part of `A - A0`.
    pub constant_shift: [f64; 2],
    /// Twist of the gauge-transformed field before translation.
    pub twist: [f64; 2],
    /// Translation `l` removing that twist.
    pub translation: [f64; 2],
    /// `|mean(a)|` of the output perturbation.
    pub mean_a: f64,
    /// `||div a||` of the output perturbation.
    pub div_a: f64,
    /// Part of `A - A0` not representable as constant + gradient + curl* (grid Nyquist content).
    pub projection_residual: f64,
    /// Largest twist component left in the output field; zero means the normal-form
    /// quasi-periodicity holds exactly.
    pub phase_condition: f64,
    /// Local check of the same condition by one-sided extrapolation across the cell
    /// boundary, limited by the extrapolation order.
    pub boundary_mismatch: f64,
}

/// Brings `(psi, A)` to normal form `(phi, A0 + curl* h)`.
pub fn fix_gauge(state: &RawLatticeState) -> Result<(QuasiPeriodicField, GaugePerturbation, GaugeFixReport)> {
    let grid = state.grid;
    let expected = 2.0 * std::f64::consts::PI * grid.n() as f64;
    let flux = lattice::flux_of(&state.a);
    if !((flux - expected).abs() <= FLUX_TOL * expected) {
        return Err(Error::FluxMismatch { found: flux, expected });
    }
    let sp = Spectral::new(grid);
    let pert = state.perturbation();
    let c = pert.mean();
    let chi = solve_periodic_poisson(&grid, &sp.div(&pert))?;
    let h: Vec<f64> = sp.inverse_laplacian(&sp.curl(&pert)).into_iter().map(|v| -v).collect();
    let grad_chi = sp.gradient(&chi);
    let rot = sp.curl_star(&h);
    let mut eta_gradient = VectorField::zeros(grid);
    let mut rest = VectorField::zeros(grid);
    for p in 0..grid.len() {
        eta_gradient.x[p] = grad_chi.x[p] + c[0];
        eta_gradient.y[p] = grad_chi.y[p] + c[1];
        rest.x[p] = pert.x[p] - eta_gradient.x[p] - rot.x[p];
        rest.y[p] = pert.y[p] - eta_gradient.y[p] - rot.y[p];
    }
    let projection_residual = rest.norm();

    let phi1: Vec<C> = (0..grid.len())
        .map(|p| {
            let x = grid.point_at(p);
            state.psi[p] * C::from_polar(1.0, -(chi[p] + c[0] * x[0] + c[1] * x[1]))
        })
        .collect();
    let twist = estimate_twist(&grid, &phi1);
    let l = twist_translation(&grid, twist)?;
    let shifted = translate_values(&grid, &phi1, twist, l);
    let half_b = 0.5 * grid.flux_density();
    let phi: Vec<C> = (0..grid.len())
        .map(|p| shifted[p] * C::from_polar(1.0, -half_b * stencil::wedge(l, grid.point_at(p))))
        .collect();
    let h_out = GaugePerturbation::from_stream(grid, sp.shift(&h, l))?;
    let a_out = h_out.potential();
    let mean = a_out.mean();
    let div = sp.div(&a_out);
    let report = GaugeFixReport {
        flux,
        eta_gradient,
        constant_shift: c,
        twist,
        translation: l,
        mean_a: mean[0].hypot(mean[1]),
        div_a: (field::integrate(&grid, &div.iter().map(|v| v * v).collect::<Vec<_>>())).sqrt(),
        projection_residual,
        phase_condition: {
            let c = estimate_twist(&grid, &phi);
            c[0].abs().max(c[1].abs())
        },
        boundary_mismatch: field::wrap_residual(&grid, &phi, [0.0, 0.0]),
    };
    Ok((QuasiPeriodicField::from_values(grid, phi)?, h_out, report))
}

/// Translation `l` with `b t_d ^ l = -C_d`, which removes the twist `C`.
pub fn twist_translation(grid: &GridSpec, twist: [f64; 2]) -> Result<[f64; 2]> {
    let [t1, t2] = grid.lattice_vectors();
    let b = grid.flux_density();
    // t ^ l = t1 l2 - t2 l1, linear in l.
    let m = [[-t1[1], t1[0]], [-t2[1], t2[0]]];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    if det.abs() <= 1e-14 {
        return Err(Error::DegenerateLattice);
    }
    let r = [-twist[0] / b, -twist[1] / b];
    Ok([
        (r[0] * m[1][1] - m[0][1] * r[1]) / det,
        (m[0][0] * r[1] - m[1][0] * r[0]) / det,
    ])
}

/// Mean-zero `u` with `Laplacian u = rhs` for a mean-zero periodic `rhs`.
pub fn solve_periodic_poisson(grid: &GridSpec, rhs: &[f64]) -> Result<Vec<f64>> {
    if rhs.len() != grid.len() {
        return Err(Error::GridMismatch);
    }
    let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
    let scale = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if mean.abs() > 1e-12 * scale {
        return Err(Error::NonzeroMean(mean));
    }
    Ok(Spectral::new(*grid).inverse_laplacian(rhs))
}

/// Line averages `B(zeta) = (1/r) int_0^r curl A(xi, zeta) d xi` along the grid lines
/// parallel to `t1`, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LineAverage {
    /// Height `x2` of each row.
    pub zeta: Vec<f64>,
    pub b: Vec<f64>,
}

impl LineAverage {
    /// Average of `B` over one period in `zeta`.
    pub fn mean(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.b.len() as f64
    }
}

pub fn line_averaged_b(state: &RawLatticeState) -> LineAverage {
    let grid = state.grid;
    let curl = state.magnetic_field();
    let (n1, n2) = (grid.n1(), grid.n2());
    let zeta = (0..n2).map(|j| grid.point(0, j)[1]).collect();
    let b = (0..n2)
        .map(|j| (0..n1).map(|i| curl[grid.index(i, j)]).sum::<f64>() / n1 as f64)
        .collect();
    LineAverage { zeta, b }
}

/// Grid lines parallel to `t_d`, with the Bloch phase `psi(x + t_d) = e^{i theta} psi(x)`.
fn lines(grid: &GridSpec, d: usize, twist: [f64; 2]) -> Vec<(Vec<usize>, f64)> {
    let (n1, n2) = (grid.n1(), grid.n2());
    let count = if d == 0 { n2 } else { n1 };
    (0..count)
        .map(|l| {
            let idx: Vec<usize> = if d == 0 {
                (0..n1).map(|i| grid.index(i, l)).collect()
            } else {
                (0..n2).map(|j| grid.index(l, j)).collect()
            };
            let x0 = grid.point_at(idx[0]);
            let (p, q) = if d == 0 { (1, 0) } else { (0, 1) };
            (idx, stencil::cell_translation_phase(grid, x0, p, q, twist))
        })
        .collect()
}

struct LineFft {
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    len: usize,
}

impl LineFft {
    fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            fwd: planner.plan_fft_forward(len),
            inv: planner.plan_fft_inverse(len),
            len,
        }
    }

    /// Signed frequency of bin `k`.
    fn freq(&self, k: usize) -> f64 {
        if 2 * k < self.len {
            k as f64
        } else {
            k as f64 - self.len as f64
        }
    }
}

/// Periodized samples `e^{-i theta k/N} psi_k` along one line.
fn periodize(values: &[C], idx: &[usize], theta: f64) -> Vec<C> {
    let n = idx.len() as f64;
    idx.iter()
        .enumerate()
        .map(|(k, &p)| values[p] * C::from_polar(1.0, -theta * k as f64 / n))
        .collect()
}

/// Twist `[C1, C2]` of a quasi-periodic field, each in `(-pi, pi]`.
///
/// For the right twist every periodized line is smooth; a wrong one leaves a jump whose
/// energy shows up in the top quarter of the spectrum, where a smooth line has almost
/// nothing. Each component is found by
/// Gauss-Newton on that high-band energy, started from a one-sided extrapolation across
/// the cell boundary.
pub fn estimate_twist(grid: &GridSpec, values: &[C]) -> [f64; 2] {
    if values.iter().all(|v| v.norm() == 0.0) {
        return [0.0, 0.0];
    }
    let mut out = [0.0; 2];
    for (d, slot) in out.iter_mut().enumerate() {
        let ls = lines(grid, d, [0.0, 0.0]);
        let n = ls[0].0.len();
        let fft = LineFft::new(n);
        let periodic: Vec<Vec<C>> = ls.iter().map(|(idx, th)| periodize(values, idx, *th)).collect();
        // Initial guess: extrapolate each line past its end and compare with the wrapped start.
        let order = 8usize.min(n - 1);
        let xs: Vec<f64> = (0..order).map(|k| (n - order + k) as f64).collect();
        let w = stencil::fornberg_weights(n as f64, &xs, 0)[0].clone();
        let mut z = C::default();
        for u in &periodic {
            let extrap: C = (0..order).map(|k| u[n - order + k] * w[k]).sum();
            z += extrap.conj() * u[0];
        }
        // u(n) = e^{-i delta} u(0) for the twisted field periodized without twist.
        let mut delta = -z.arg();
        let xi: Vec<f64> = (0..n).map(|k| k as f64 / n as f64).collect();
        let high = |k: usize| fft.freq(k).abs() * 8.0 >= 3.0 * n as f64;
        for _ in 0..8 {
            let mut num = 0.0;
            let mut den = 0.0;
            for u in &periodic {
                let mut r: Vec<C> = u.iter().zip(&xi).map(|(v, x)| v * C::from_polar(1.0, -delta * x)).collect();
                let mut j: Vec<C> = r.iter().zip(&xi).map(|(v, x)| -C::i() * x * v).collect();
                fft.fwd.process(&mut r);
                fft.fwd.process(&mut j);
                for k in (0..n).filter(|&k| high(k)) {
                    num += (j[k].conj() * r[k]).re;
                    den += j[k].norm_sqr();
                }
            }
            if den == 0.0 {
                break;
            }
            let step = num / den;
            delta -= step;
            if step.abs() <= 1e-15 {
                break;
            }
        }
        let wrapped = (delta + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI) - std::f64::consts::PI;
        *slot = if wrapped <= -std::f64::consts::PI { std::f64::consts::PI } else { wrapped };
    }
    out
}

/// `psi(x + s t_d)` on the grid for a field with the given twist.
fn shift_along(grid: &GridSpec, values: &[C], twist: [f64; 2], d: usize, s: f64) -> Vec<C> {
    let mut out = vec![C::default(); values.len()];
    let ls = lines(grid, d, twist);
    let n = ls[0].0.len();
    let fft = LineFft::new(n);
    let two_pi = 2.0 * std::f64::consts::PI;
    for (idx, theta) in &ls {
        let mut u = periodize(values, idx, *theta);
        fft.fwd.process(&mut u);
        for (k, v) in u.iter_mut().enumerate() {
            let f = fft.freq(k);
            *v *= if 2 * k == n {
                C::new((two_pi * f * s).cos(), 0.0)
            } else {
                C::from_polar(1.0, two_pi * f * s)
            };
        }
        fft.inv.process(&mut u);
        for (k, &p) in idx.iter().enumerate() {
            let xi = k as f64 / n as f64 + s;
            out[p] = u[k] * C::from_polar(1.0 / n as f64, theta * xi);
        }
    }
    out
}

/// Plain gradient `grad psi` (no connection) of a quasi-periodic field, spectral along
/// each family of lattice lines.
pub fn line_gradient(grid: &GridSpec, values: &[C], twist: [f64; 2]) -> [Vec<C>; 2] {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut du = [vec![C::default(); values.len()], vec![C::default(); values.len()]];
    for (d, out) in du.iter_mut().enumerate() {
        let ls = lines(grid, d, twist);
        let n = ls[0].0.len();
        let fft = LineFft::new(n);
        for (idx, theta) in &ls {
            let mut u = periodize(values, idx, *theta);
            let mut du_spec = u.clone();
            fft.fwd.process(&mut du_spec);
            for (k, v) in du_spec.iter_mut().enumerate() {
                *v *= if 2 * k == n { C::default() } else { C::new(0.0, two_pi * fft.freq(k)) };
            }
            fft.inv.process(&mut du_spec);
            // d/dxi (e^{i theta xi} u) = e^{i theta xi} (u' + i theta u).
            for (k, &p) in idx.iter().enumerate() {
                let ph = C::from_polar(1.0, theta * k as f64 / n as f64);
                u[k] = ph * (du_spec[k] / n as f64 + C::i() * theta * u[k]);
                out[p] = u[k];
            }
        }
    }
    // d/dxi_d = t_d . grad, so grad = T^{-T} (d/dxi_1, d/dxi_2).
    let m = grid.lattice_inverse_transpose();
    let gx = (0..values.len()).map(|p| du[0][p] * m[0][0] + du[1][p] * m[0][1]).collect();
    let gy = (0..values.len()).map(|p| du[0][p] * m[1][0] + du[1][p] * m[1][1]).collect();
    [gx, gy]
}

/// `psi(x + l)` sampled on the grid, by exact Bloch periodization along lattice lines.
///
/// The result has twist `C_t + (b/2) t ^ l`.
pub fn translate_values(grid: &GridSpec, values: &[C], twist: [f64; 2], l: [f64; 2]) -> Vec<C> {
    let [t1, t2] = grid.lattice_vectors();
    let s = grid.point_to_frac(l);
    let half_b = 0.5 * grid.flux_density();
    let first = shift_along(grid, values, twist, 0, s[0]);
    let shift1 = [t1[0] * s[0], t1[1] * s[0]];
    let mid_twist = [
        twist[0] + half_b * stencil::wedge(t1, shift1),
        twist[1] + half_b * stencil::wedge(t2, shift1),
    ];
    shift_along(grid, &first, mid_twist, 1, s[1])
}

/// `psi(x + l)` for a zero-twist field, returned with its new twist.
pub fn translate_field(psi: &QuasiPeriodicField, l: [f64; 2]) -> (Vec<C>, [f64; 2]) {
    let grid = *psi.grid();
    let half_b = 0.5 * grid.flux_density();
    let [t1, t2] = grid.lattice_vectors();
    let v = translate_values(&grid, psi.values(), [0.0, 0.0], l);
    (v, [half_b * stencil::wedge(t1, l), half_b * stencil::wedge(t2, l)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeShape;
    use crate::theta::ThetaState;

    fn theta_state(shape: LatticeShape, size: usize) -> (GridSpec, QuasiPeriodicField) {
        let grid = GridSpec::uniform(shape, 1, size).unwrap();
        let psi = ThetaState::new(shape, 1).unwrap().sample(&grid).unwrap();
        (grid, psi)
    }

    #[test]
    fn poisson_inverts_a_single_mode() {
        let grid = GridSpec::uniform(LatticeShape::triangular(), 1, 16).unwrap();
        let m = grid.lattice_inverse_transpose();
        let tp = 2.0 * std::f64::consts::PI;
        let g = [tp * (m[0][0] + m[0][1]), tp * (m[1][0] + m[1][1])];
        let g2 = g[0] * g[0] + g[1] * g[1];
        let rhs: Vec<f64> = (0..grid.len())
            .map(|p| {
                let x = grid.point_at(p);
                (g[0] * x[0] + g[1] * x[1]).cos()
            })
            .collect();
        let u = solve_periodic_poisson(&grid, &rhs).unwrap();
        for p in 0..grid.len() {
            assert!((u[p] + rhs[p] / g2).abs() < 1e-13);
        }
        assert!(solve_periodic_poisson(&grid, &vec![0.0; grid.len()]).unwrap().iter().all(|v| *v == 0.0));
        assert!(matches!(
            solve_periodic_poisson(&grid, &vec![1.0; grid.len()]),
            Err(Error::NonzeroMean(_))
        ));
    }

    #[test]
    fn twist_of_theta_state_is_zero() {
        let (grid, psi) = theta_state(LatticeShape::triangular(), 32);
        let c = estimate_twist(&grid, psi.values());
        assert!(c[0].abs() < 1e-10 && c[1].abs() < 1e-10, "{c:?}");
    }

    #[test]
    fn translation_twist_is_recovered() {
        let (grid, psi) = theta_state(LatticeShape::new(Complex64::new(0.2, 1.1)).unwrap(), 32);
        let l = [0.31, -0.17];
        let (v, expect) = translate_field(&psi, l);
        let c = estimate_twist(&grid, &v);
        for d in 0..2 {
            let diff = (c[d] - expect[d] + std::f64::consts::PI).rem_euclid(2.0 * std::f64::consts::PI)
                - std::f64::consts::PI;
            assert!(diff.abs() < 1e-10, "{c:?} vs {expect:?}");
        }
        // Direct evaluation of the theta series at the shifted points.
        let st = ThetaState::new(grid.shape(), 1).unwrap();
        let err = (0..grid.len())
            .map(|p| {
                let x = grid.point_at(p);
                (v[p] - st.eval([x[0] + l[0], x[1] + l[1]])).norm()
            })
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }

    #[test]
    fn twist_translation_solves_its_system() {
        let grid = GridSpec::uniform(LatticeShape::triangular(), 1, 16).unwrap();
        let c = [0.4, -1.2];
        let l = twist_translation(&grid, c).unwrap();
        let [t1, t2] = grid.lattice_vectors();
        let b = grid.flux_density();
        assert!((b * stencil::wedge(t1, l) + c[0]).abs() < 1e-14);
        assert!((b * stencil::wedge(t2, l) + c[1]).abs() < 1e-14);
    }

    #[test]
    fn background_has_constant_line_average() {
        let (grid, psi) = theta_state(LatticeShape::square(), 16);
        let st = RawLatticeState::from_normal_form(&psi, &GaugePerturbation::zeros(grid)).unwrap();
        let avg = line_averaged_b(&st);
        assert!(avg.b.iter().all(|v| (v - grid.flux_density()).abs() < 1e-12));
    }

    #[test]
    fn normal_form_is_a_fixed_point() {
        let (_, psi) = theta_state(LatticeShape::triangular(), 32);
        let st = RawLatticeState::from_normal_form(&psi, &GaugePerturbation::zeros(*psi.grid())).unwrap();
        let (phi, h, rep) = fix_gauge(&st).unwrap();
        assert!(rep.translation[0].abs() < 1e-10 && rep.translation[1].abs() < 1e-10);
        let err = phi.values().iter().zip(psi.values()).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
        assert!(h.stream().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn flux_mismatch_is_rejected() {
        let (grid, psi) = theta_state(LatticeShape::square(), 16);
        let a = VectorField::from_fn(grid, |x| [-0.6 * x[1], 0.6 * x[0]]);
        let st = RawLatticeState::new(grid, psi.values().to_vec(), a).unwrap();
        assert!(matches!(fix_gauge(&st), Err(Error::FluxMismatch { .. })));
    }
}
