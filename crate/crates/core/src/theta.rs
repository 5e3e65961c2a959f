//! Closed-form lowest-Landau-level states.
//!
//! On a cell of shape `tau` with `n` flux quanta, every element of `null(L - n)` is
//! `psi(x) = exp(i (n/2) x2 z) sum_k c_k exp(i k q z)`, with `z = x1 + i x2`,
//! `q = sqrt(2 pi Im tau)`, and coefficients tied by
//! `c_{k+n} = exp(i n pi tau) exp(2 i k pi tau) c_k`. Solving the recursion gives
//! `c_{m + j n} = c_m exp(i pi tau (n j^2 + 2 m j))`, so `c_0 .. c_{n-1}` are free.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{self, GridSpec, QuasiPeriodicField};
use crate::lattice::LatticeShape;
use crate::operators::MagneticLaplacian;
use crate::spectral::Spectral;

type C = Complex64;

/// Smallest truncation ever used.
pub const MIN_TRUNCATION: usize = 20;

/// Truncation `|k| <= K` keeping the dropped tail below machine precision.
///
/// Terms behave like `exp(-pi Im tau (k^2/n - 2|k|))` over the cell, so `K` grows with `n`
/// and shrinks with `Im tau`.
pub fn auto_truncation(tau: Complex64, n: u32) -> usize {
    let n = n as f64;
    let target = 45.0 / (std::f64::consts::PI * tau.im);
    // Smallest K with K^2/n - 2K >= target.
    let k = n * (1.0 + (1.0 + target / n).sqrt());
    (k.ceil() as usize + 2).max(MIN_TRUNCATION)
}

/// A lowest-Landau-level state described by its free theta coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaState {
    shape: LatticeShape,
    n: u32,
    c: Vec<C>,
    k: usize,
}

impl ThetaState {
    /// The state with `c_0 = 1` and the other free coefficients zero.
    pub fn new(shape: LatticeShape, n: u32) -> Result<Self> {
        Self::basis(shape, n, 0)
    }

    /// The `m`-th basis state: `c_m = 1`, other free coefficients zero.
    pub fn basis(shape: LatticeShape, n: u32, m: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("flux index n must be >= 1".into()));
        }
        if m >= n as usize {
            return Err(Error::InvalidParameter(format!("basis index {m} out of range for n = {n}")));
        }
        let mut c = vec![C::default(); n as usize];
        c[m] = C::new(1.0, 0.0);
        Self::with_coefficients(shape, n, c)
    }

    pub fn with_coefficients(shape: LatticeShape, n: u32, c: Vec<C>) -> Result<Self> {
        if !(shape.tau().im > 0.0) {
            return Err(Error::InvalidParameter("Im tau must be positive".into()));
        }
        if n == 0 || c.len() != n as usize {
            return Err(Error::InvalidParameter(format!("need exactly n = {n} free coefficients")));
        }
        Ok(Self {
            shape,
            n,
            c,
            k: auto_truncation(shape.tau(), n),
        })
    }

    /// Overrides the truncation; values below [`MIN_TRUNCATION`] are raised to it.
    pub fn with_truncation(mut self, k: usize) -> Self {
        self.k = k.max(MIN_TRUNCATION);
        self
    }

    pub fn shape(&self) -> LatticeShape {
        self.shape
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn truncation(&self) -> usize {
        self.k
    }

    pub fn free_coefficients(&self) -> &[C] {
        &self.c
    }

    /// Log of the coefficient factor `c_k / c_m` for `k = m + j n`.
    fn log_factor(&self, k: i64) -> (usize, C) {
        let n = self.n as i64;
        let m = k.rem_euclid(n);
        let j = (k - m) / n;
        let e = C::i() * std::f64::consts::PI * self.shape.tau() * ((n * j * j + 2 * m * j) as f64);
        (m as usize, e)
    }

    /// Full coefficient `c_k`.
    pub fn coefficient(&self, k: i64) -> C {
        let (m, e) = self.log_factor(k);
        self.c[m] * e.exp()
    }

    /// `psi(x)`, summing the truncated series from the tails inward.
    pub fn eval(&self, x: [f64; 2]) -> C {
        let q = (2.0 * std::f64::consts::PI * self.shape.tau().im).sqrt();
        let z = C::new(x[0], x[1]);
        let prefactor = C::i() * (self.n as f64 / 2.0) * x[1] * z;
        let kk = self.k as i64;
        let term = |k: i64| -> C {
            let (m, e) = self.log_factor(k);
            if self.c[m] == C::default() {
                return C::default();
            }
            self.c[m] * (e + C::i() * (k as f64) * q * z + prefactor).exp()
        };
        let mut acc = C::default();
        for k in (1..=kk).rev() {
            acc += term(k) + term(-k);
        }
        acc + term(0)
    }

    pub fn sample(&self, grid: &GridSpec) -> Result<QuasiPeriodicField> {
        if grid.shape().tau() != self.shape.tau() || grid.n() != self.n {
            return Err(Error::GridMismatch);
        }
        Ok(field::sample(|x| self.eval(x), grid))
    }
}

/// Evaluates the state at a point.
pub fn eval_psi0(state: &ThetaState, x: [f64; 2]) -> C {
    state.eval(x)
}

/// Gram conditioning beyond which [`null_basis`] reports the basis as unusable.
pub const MAX_GRAM_CONDITION: f64 = 1e6;

/// The `n` sampled basis states spanning `null(L - n)`.
pub fn null_basis(shape: LatticeShape, n: u32, grid: &GridSpec, k: Option<usize>) -> Result<Vec<QuasiPeriodicField>> {
    let mut out = Vec::with_capacity(n as usize);
    for m in 0..n as usize {
        let mut st = ThetaState::basis(shape, n, m)?;
        if let Some(k) = k {
            st = st.with_truncation(k);
        }
        out.push(st.sample(grid)?);
    }
    let cond = gram_condition(&out);
    if !(cond <= MAX_GRAM_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }
    Ok(out)
}

/// Ratio of largest to smallest eigenvalue of the Gram matrix of `fields`.
pub fn gram_condition(fields: &[QuasiPeriodicField]) -> f64 {
    let m = fields.len();
    let g = nalgebra::DMatrix::from_fn(m, m, |i, j| fields[i].inner(&fields[j]).expect("same grid"));
    let (vals, _) = crate::linalg::hermitian_eig(&g);
    let lo = vals.first().copied().unwrap_or(0.0);
    let hi = vals.last().copied().unwrap_or(0.0);
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Relative residual of `Im(conj(psi) grad_A0 psi) = -(1/2) curl* |psi|^2`, which holds
/// exactly on the lowest Landau level.
pub fn lll_current_identity_check(psi: &QuasiPeriodicField) -> f64 {
    let grid = *psi.grid();
    let lap = MagneticLaplacian::new(grid);
    let [gx, gy] = lap.gradient(psi.values());
    let rho = psi.density();
    let half_curl = Spectral::new(grid).curl_star(&rho);
    let mut num = 0.0;
    for p in 0..grid.len() {
        let jx = (psi.values()[p].conj() * gx[p]).im;
        let jy = (psi.values()[p].conj() * gy[p]).im;
        num += (jx + 0.5 * half_curl.x[p]).powi(2) + (jy + 0.5 * half_curl.y[p]).powi(2);
    }
    let den: f64 = rho.iter().map(|r| r * r).sum();
    if den == 0.0 {
        0.0
    } else {
        (num / den).sqrt()
    }
}

/// Vortex content of a sampled field: the winding of the gauge-invariant phase around
/// every grid plaquette.
#[derive(Clone, Debug, PartialEq)]
pub struct ZeroCount {
    /// Plaquettes with nonzero winding.
    pub zeros: usize,
    /// Sum of all windings; equals the flux index for a lattice state.
    pub total_winding: i64,
    /// Fractional coordinates of the plaquette centres carrying a winding.
    pub locations: Vec<[f64; 2]>,
}

pub fn count_zeros(psi: &QuasiPeriodicField) -> ZeroCount {
    let grid = *psi.grid();
    let half_b = 0.5 * grid.flux_density();
    let pt = |i: i64, j: i64| grid.frac_to_point([i as f64 / grid.n1() as f64, j as f64 / grid.n2() as f64]);
    let edge = |a: (i64, i64), b: (i64, i64)| -> f64 {
        let (xa, xb) = (pt(a.0, a.1), pt(b.0, b.1));
        let va = psi.extended(a.0, a.1);
        let vb = psi.extended(b.0, b.1);
        let transport = half_b * crate::stencil::wedge(xa, xb);
        (vb * va.conj() * C::from_polar(1.0, -transport)).arg()
    };
    let plaquette_flux = grid.flux_density() * grid.quad_weight();
    let mut zeros = 0;
    let mut total = 0;
    let mut locations = Vec::new();
    for j in 0..grid.n2() as i64 {
        for i in 0..grid.n1() as i64 {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let mut s = plaquette_flux;
            for e in 0..4 {
                s += edge(corners[e], corners[(e + 1) % 4]);
            }
            let w = (s / (2.0 * std::f64::consts::PI)).round() as i64;
            if w != 0 {
                zeros += 1;
                total += w;
                locations.push([(i as f64 + 0.5) / grid.n1() as f64, (j as f64 + 0.5) / grid.n2() as f64]);
            }
        }
    }
    ZeroCount {
        zeros,
        total_winding: total,
        locations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn coefficients_follow_the_recursion() {
        let tau = C::new(0.3, 1.1);
        let shape = LatticeShape::new(tau).unwrap();
        for n in 1..=3u32 {
            let st = ThetaState::with_coefficients(shape, n, (0..n).map(|m| C::new(1.0 + m as f64, 0.5)).collect()).unwrap();
            for k in -6i64..6 {
                let lhs = st.coefficient(k + n as i64);
                let rhs = (C::i() * PI * tau * n as f64).exp() * (C::i() * 2.0 * PI * tau * k as f64).exp() * st.coefficient(k);
                assert!((lhs - rhs).norm() <= 1e-12 * rhs.norm().max(1e-300), "n={n} k={k}");
            }
        }
    }

    #[test]
    fn n1_coefficients_are_gaussian() {
        let shape = LatticeShape::triangular();
        let st = ThetaState::new(shape, 1).unwrap();
        for k in -5i64..=5 {
            let expect = (C::i() * PI * shape.tau() * (k * k) as f64).exp();
            assert!((st.coefficient(k) - expect).norm() < 1e-14);
        }
    }

    #[test]
    fn origin_value_is_jacobi_theta() {
        let st = ThetaState::new(LatticeShape::square(), 1).unwrap();
        let oracle: f64 = (-30i32..=30).map(|k| (-PI * (k * k) as f64).exp()).sum();
        assert!((st.eval([0.0, 0.0]).re - oracle).abs() < 1e-14);
        assert!((oracle - 1.086435).abs() < 1e-6);
    }

    #[test]
    fn states_are_quasi_periodic() {
        for n in 1..=3u32 {
            let grid = GridSpec::uniform(LatticeShape::triangular(), n, 16).unwrap();
            let st = ThetaState::new(grid.shape(), n).unwrap();
            assert!(field::quasi_periodicity_residual(|x| st.eval(x), &grid) < 1e-10);
        }
    }

    #[test]
    fn truncation_is_stable() {
        let st = ThetaState::new(LatticeShape::new(C::new(0.1, 0.5)).unwrap(), 1).unwrap();
        let hi = st.clone().with_truncation(30);
        for x in [[0.3, 0.2], [2.0, 1.0], [-0.5, 2.5]] {
            let (a, b) = (st.eval(x), hi.eval(x));
            assert!((a - b).norm() <= 1e-13 * b.norm());
        }
    }

    #[test]
    fn one_zero_per_flux_quantum() {
        for n in 1..=3u32 {
            let grid = GridSpec::uniform(LatticeShape::square(), n, 32).unwrap();
            let psi = ThetaState::new(grid.shape(), n).unwrap().sample(&grid).unwrap();
            let zc = count_zeros(&psi);
            assert_eq!(zc.total_winding, n as i64);
            assert_eq!(zc.zeros, n as usize);
        }
    }
}
