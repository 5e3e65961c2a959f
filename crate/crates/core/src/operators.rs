//! The magnetic Schrodinger operator `L = -Laplacian_{A0}`, its ladder factorization,
//! and the Maxwell operator on periodic stream functions.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{GaugePerturbation, GridSpec, QuasiPeriodicField, VectorField};
use crate::linalg::{self, EigenOptions, SolveStats};
use crate::spectral::Spectral;
use crate::stencil::{CovariantStencil, DEFAULT_RADIUS};

type C = Complex64;

/// Largest number of eigenpairs [`eigs_l`] will compute.
pub const MAX_EIGENPAIRS: usize = 20;

/// `L = -(grad - i A0)^2` with `A0 = (b/2) x^perp`, discretized with Peierls-transported
/// central differences and the quasi-periodic boundary phase.
#[derive(Clone, Debug)]
pub struct MagneticLaplacian {
    stencil: CovariantStencil,
    ginv: [[f64; 2]; 2],
}

impl MagneticLaplacian {
    pub fn new(grid: GridSpec) -> Self {
        Self::with_radius(grid, DEFAULT_RADIUS)
    }

    /// Stencil half-width `radius` gives order `2 radius` differences.
    pub fn with_radius(grid: GridSpec, radius: usize) -> Self {
        Self::with_twist(grid, radius, [0.0, 0.0])
    }

    /// Operator on fields whose boundary cocycle carries extra constant phases `twist`.
    pub fn with_twist(grid: GridSpec, radius: usize, twist: [f64; 2]) -> Self {
        Self {
            stencil: CovariantStencil::with_twist(grid, radius, twist),
            ginv: grid.step_metric_inverse(),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.stencil.grid()
    }

    pub fn stencil(&self) -> &CovariantStencil {
        &self.stencil
    }

    /// Covariant derivatives along the two grid steps, `delta_d . grad_A0`.
    pub fn step_derivatives(&self, v: &[C]) -> [Vec<C>; 2] {
        let len = v.len();
        let mut d1 = vec![C::default(); len];
        let mut d2 = vec![C::default(); len];
        self.stencil.first(0, v, &mut d1);
        self.stencil.first(1, v, &mut d2);
        [d1, d2]
    }

    /// Cartesian covariant gradient `(grad - i A0) v`.
    pub fn gradient(&self, v: &[C]) -> [Vec<C>; 2] {
        let [d1, d2] = self.step_derivatives(v);
        let m = self.grid().step_inverse_transpose();
        let gx = d1.iter().zip(&d2).map(|(a, b)| a * m[0][0] + b * m[0][1]).collect();
        let gy = d1.iter().zip(&d2).map(|(a, b)| a * m[1][0] + b * m[1][1]).collect();
        [gx, gy]
    }

    pub fn apply(&self, v: &[C]) -> Vec<C> {
        let len = v.len();
        let g = self.ginv;
        let mut out = vec![C::default(); len];
        let mut tmp = vec![C::default(); len];
        self.stencil.second(0, v, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o = -g[0][0] * t);
        self.stencil.second(1, v, &mut tmp);
        out.iter_mut().zip(&tmp).for_each(|(o, t)| *o -= g[1][1] * t);
        if g[0][1] != 0.0 {
            let [d1, d2] = self.step_derivatives(v);
            self.stencil.first(1, &d1, &mut tmp);
            out.iter_mut().zip(&tmp).for_each(|(o, t)| *o -= g[0][1] * t);
            self.stencil.first(0, &d2, &mut tmp);
            out.iter_mut().zip(&tmp).for_each(|(o, t)| *o -= g[0][1] * t);
        }
        out
    }

    pub fn apply_field(&self, v: &QuasiPeriodicField) -> Result<QuasiPeriodicField> {
        self.grid().check_same(v.grid())?;
        QuasiPeriodicField::from_values(*self.grid(), self.apply(v.values()))
    }
}

/// Which ladder operator to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ladder {
    /// `L+ = (grad_A)_1 - i (grad_A)_2`.
    Raise,
    /// `L- = (grad_A)_1 + i (grad_A)_2`, annihilating the lowest level.
    Lower,
}

/// `L+- = d1 -+ i d2 -+ (b/2) x1 + i (b/2) x2` with the quasi-periodic wrap.
#[derive(Clone, Debug)]
pub struct LadderOperators {
    lap: MagneticLaplacian,
}

impl LadderOperators {
    pub fn new(grid: GridSpec) -> Self {
        Self {
            lap: MagneticLaplacian::new(grid),
        }
    }

    pub fn from_laplacian(lap: MagneticLaplacian) -> Self {
        Self { lap }
    }

    pub fn grid(&self) -> &GridSpec {
        self.lap.grid()
    }

    pub fn apply(&self, which: Ladder, v: &[C]) -> Vec<C> {
        let [gx, gy] = self.lap.gradient(v);
        let s = match which {
            Ladder::Raise => -C::i(),
            Ladder::Lower => C::i(),
        };
        gx.iter().zip(&gy).map(|(a, b)| a + s * b).collect()
    }
}

/// `M = curl* curl` acting on `a = curl* h`; on stream functions it is the biharmonic `Laplacian^2`.
#[derive(Clone, Debug)]
pub struct MaxwellOperator {
    spectral: Spectral,
}

impl MaxwellOperator {
    pub fn new(grid: GridSpec) -> Self {
        Self {
            spectral: Spectral::new(grid),
        }
    }

    pub fn spectral(&self) -> &Spectral {
        &self.spectral
    }

    /// `M a` for a periodic vector field.
    pub fn apply(&self, a: &VectorField) -> VectorField {
        let c = self.spectral.curl(a);
        self.spectral.curl_star(&c)
    }

    /// `curl M curl* h = Laplacian^2 h`.
    pub fn apply_stream(&self, h: &[f64]) -> Vec<f64> {
        self.spectral.apply_symbol(h, |g, ny| {
            let k2 = g[0] * g[0] + g[1] * g[1];
            if ny {
                Complex64::default()
            } else {
                Complex64::new(k2 * k2, 0.0)
            }
        })
    }

    /// Rayleigh quotient `<a, M a> / <a, a>` for `a = curl* h`.
    pub fn rayleigh_quotient(&self, h: &[f64]) -> f64 {
        let a = self.spectral.curl_star(h);
        let ma = self.apply(&a);
        let num: f64 = a.x.iter().zip(&ma.x).chain(a.y.iter().zip(&ma.y)).map(|(p, q)| p * q).sum();
        let den: f64 = a.x.iter().chain(&a.y).map(|p| p * p).sum();
        num / den
    }

    /// Smallest nonzero eigenvalue of the torus Laplacian, the lower bound of `M`.
    pub fn spectral_gap(&self) -> f64 {
        self.spectral
            .wavenumbers_sq()
            .into_iter()
            .filter(|&k| k > 0.0)
            .fold(f64::INFINITY, f64::min)
    }
}

/// The `k` lowest eigenpairs of `L`, ascending, orthonormal in the quadrature inner product,
/// each phase-fixed so its largest component is real and positive.
pub fn eigs_l(op: &MagneticLaplacian, k: usize) -> Result<Vec<(f64, QuasiPeriodicField)>> {
    if k == 0 || k > MAX_EIGENPAIRS {
        return Err(Error::InvalidParameter(format!("eigenpair count must be in 1..={MAX_EIGENPAIRS}, got {k}")));
    }
    let grid = *op.grid();
    let sp = Spectral::new(grid);
    let k2 = sp.wavenumbers_sq();
    // Periodic (-Laplacian + shift)^{-1} captures the high-frequency part of L.
    let shift = grid.flux_density();
    let precond = |_theta: f64, r: &[C]| -> Vec<C> {
        let mut spec = sp.forward_complex(r);
        spec.iter_mut().zip(&k2).for_each(|(s, k)| *s /= k + shift);
        sp.inverse_complex(spec)
    };
    let (vals, vecs) =
        linalg::lowest_eigenpairs_preconditioned(grid.len(), |v| op.apply(v), precond, k, &EigenOptions::default())?;
    let scale = 1.0 / grid.quad_weight().sqrt();
    Ok(vals
        .into_iter()
        .zip(vecs)
        .map(|(lam, mut v)| {
            linalg::fix_phase(&mut v);
            v.iter_mut().for_each(|x| *x *= scale);
            (lam, QuasiPeriodicField::from_values(grid, v).expect("grid sized"))
        })
        .collect())
}

/// Relative tolerance of the projected residual in [`solve_m_plus_density`].
pub const M_SOLVE_RTOL: f64 = 1e-10;

/// Solves `(M + rho) a = J` for `a = curl* h` through the stream-function normal form
/// `Laplacian^2 h + curl(rho curl* h) = curl J`.
pub fn solve_m_plus_density(density: &[f64], rhs: &VectorField, grid: &GridSpec) -> Result<GaugePerturbation> {
    solve_m_plus_density_stats(density, rhs, grid, None, M_SOLVE_RTOL).map(|(a, _)| a)
}

pub(crate) fn solve_m_plus_density_stats(
    density: &[f64],
    rhs: &VectorField,
    grid: &GridSpec,
    guess: Option<&[f64]>,
    rtol: f64,
) -> Result<(GaugePerturbation, SolveStats)> {
    grid.check_same(rhs.grid())?;
    if density.len() != grid.len() {
        return Err(Error::GridMismatch);
    }
    if density.iter().any(|&d| d < 0.0) {
        return Err(Error::InvalidParameter("density must be non-negative".into()));
    }
    let sp = Spectral::new(*grid);
    let b = sp.project(&sp.curl(rhs));
    let has_density = density.iter().any(|&d| d != 0.0);
    let apply = |h: &[f64]| -> Vec<f64> {
        let h = sp.project(h);
        let mut out = sp.apply_symbol(&h, |g, _| {
            let k2 = g[0] * g[0] + g[1] * g[1];
            Complex64::new(k2 * k2, 0.0)
        });
        if has_density {
            let mut a = sp.curl_star(&h);
            for p in 0..a.x.len() {
                a.x[p] *= density[p];
                a.y[p] *= density[p];
            }
            let c = sp.curl(&a);
            out.iter_mut().zip(c).for_each(|(o, v)| *o += v);
        }
        sp.project(&out)
    };
    let precond = |r: &[f64]| -> Vec<f64> {
        sp.apply_symbol(r, |g, ny| {
            let k2 = g[0] * g[0] + g[1] * g[1];
            if ny || k2 == 0.0 {
                Complex64::default()
            } else {
                Complex64::new(1.0 / (k2 * k2), 0.0)
            }
        })
    };
    let (h, stats) = linalg::pcg_real(apply, precond, &b, guess, rtol, 2000)?;
    let h = sp.project(&h);
    Ok((GaugePerturbation::from_stream(*grid, h)?, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::LatticeShape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_smooth(grid: &GridSpec, seed: u64) -> Vec<C> {
        // Random combination of the lowest eigenvectors, smooth by construction.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pairs = eigs_l(&MagneticLaplacian::new(*grid), 6).unwrap();
        let mut v = vec![C::default(); grid.len()];
        for (_, f) in &pairs {
            let c = C::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5);
            v.iter_mut().zip(f.values()).for_each(|(a, b)| *a += c * b);
        }
        v
    }

    #[test]
    fn laplacian_is_hermitian() {
        let grid = GridSpec::uniform(LatticeShape::triangular(), 2, 16).unwrap();
        let lap = MagneticLaplacian::new(grid);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut rand_vec = || -> Vec<C> { (0..grid.len()).map(|_| C::new(rng.gen(), rng.gen())).collect() };
        let (u, v) = (rand_vec(), rand_vec());
        let lhs = linalg::dot_c(&u, &lap.apply(&v));
        let rhs = linalg::dot_c(&lap.apply(&u), &v);
        let scale = linalg::norm_c(&u) * linalg::norm_c(&v);
        assert!((lhs - rhs).norm() <= 1e-12 * scale * 100.0);
    }

    #[test]
    fn ladder_factorization_holds_on_smooth_fields() {
        let grid = GridSpec::uniform(LatticeShape::square(), 1, 32).unwrap();
        let lap = MagneticLaplacian::new(grid);
        let ladder = LadderOperators::from_laplacian(lap.clone());
        let v = random_smooth(&grid, 7);
        let lv = lap.apply(&v);
        let lm = ladder.apply(Ladder::Lower, &v);
        let pm = ladder.apply(Ladder::Raise, &lm);
        let b = grid.flux_density();
        let resid: Vec<C> = (0..v.len()).map(|p| lv[p] - b * v[p] + pm[p]).collect();
        let rel = linalg::norm_c(&resid) / linalg::norm_c(&v);
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn maxwell_single_mode_inverse() {
        let grid = GridSpec::uniform(LatticeShape::triangular(), 1, 16).unwrap();
        let sp = Spectral::new(grid);
        let m = grid.lattice_inverse_transpose();
        let two_pi = 2.0 * std::f64::consts::PI;
        let g = [two_pi * (2.0 * m[0][0] + m[0][1]), two_pi * (2.0 * m[1][0] + m[1][1])];
        let f: Vec<f64> = (0..grid.len()).map(|p| {
            let x = grid.point_at(p);
            (g[0] * x[0] + g[1] * x[1]).sin()
        }).collect();
        let j = sp.curl_star(&f);
        let a = solve_m_plus_density(&vec![0.0; grid.len()], &j, &grid).unwrap();
        let k2 = g[0] * g[0] + g[1] * g[1];
        for (h, fv) in a.stream().iter().zip(&f) {
            assert!((h - fv / k2).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rhs_gives_zero_potential() {
        let grid = GridSpec::uniform(LatticeShape::square(), 1, 16).unwrap();
        let a = solve_m_plus_density(&vec![0.5; grid.len()], &VectorField::zeros(grid), &grid).unwrap();
        assert!(a.stream().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn small_eigs_are_landau_levels() {
        let grid = GridSpec::uniform(LatticeShape::square(), 1, 24).unwrap();
        let pairs = eigs_l(&MagneticLaplacian::new(grid), 2).unwrap();
        assert!((pairs[0].0 - 1.0).abs() < 1e-3, "{}", pairs[0].0);
        assert!((pairs[1].0 - 3.0).abs() < 1e-2, "{}", pairs[1].0);
        assert!((pairs[0].1.norm_sq() - 1.0).abs() < 1e-10);
    }
}
