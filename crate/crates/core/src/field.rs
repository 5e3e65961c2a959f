//! Grids over one lattice cell and the fields that live on them.
//!
//! Samples are stored for `x = (i/N1) t1 + (j/N2) t2`, `0 <= i < N1`, `0 <= j < N2`,
//! at flat index `i + N1 j`. Quasi-periodicity is never stored; it is applied by
//! every stencil that reaches across the cell edge.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::lattice::LatticeShape;
use crate::spectral::Spectral;
use crate::stencil::{self, CovariantStencil, DEFAULT_RADIUS};

/// Uniform grid over one cell of a lattice carrying `n` flux quanta.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    shape: LatticeShape,
    n: u32,
    n1: usize,
    n2: usize,
}

impl GridSpec {
    pub fn new(shape: LatticeShape, n: u32, n1: usize, n2: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("flux index n must be >= 1".into()));
        }
        for (name, v) in [("N1", n1), ("N2", n2)] {
            if v < 8 || v % 2 != 0 {
                return Err(Error::InvalidParameter(format!("{name} must be even and >= 8, got {v}")));
            }
        }
        Ok(Self { shape, n, n1, n2 })
    }

    /// Square `N x N` grid.
    pub fn uniform(shape: LatticeShape, n: u32, size: usize) -> Result<Self> {
        Self::new(shape, n, size, size)
    }

    pub fn shape(&self) -> LatticeShape {
        self.shape
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn len(&self) -> usize {
        self.n1 * self.n2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.n1 * j
    }

    #[inline]
    pub fn coords(&self, p: usize) -> (usize, usize) {
        (p % self.n1, p / self.n1)
    }

    pub fn cell_area(&self) -> f64 {
        self.shape.cell_area()
    }

    /// Equal quadrature weight `area / (N1 N2)`.
    pub fn quad_weight(&self) -> f64 {
        self.cell_area() / self.len() as f64
    }

    /// Constant background field `b = 2 pi n / area`, equal to `n` in rescaled units.
    pub fn flux_density(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.n as f64 / self.cell_area()
    }

    pub fn lattice_vectors(&self) -> [[f64; 2]; 2] {
        self.shape.basis()
    }

    /// Grid steps `t1 / N1` and `t2 / N2`.
    pub fn steps(&self) -> [[f64; 2]; 2] {
        let [t1, t2] = self.lattice_vectors();
        let (a, b) = (self.n1 as f64, self.n2 as f64);
        [[t1[0] / a, t1[1] / a], [t2[0] / b, t2[1] / b]]
    }

    /// Point with fractional coordinates `(u1, u2)`.
    pub fn frac_to_point(&self, u: [f64; 2]) -> [f64; 2] {
        let [t1, t2] = self.lattice_vectors();
        [u[0] * t1[0] + u[1] * t2[0], u[0] * t1[1] + u[1] * t2[1]]
    }

    pub fn point_to_frac(&self, x: [f64; 2]) -> [f64; 2] {
        let [t1, t2] = self.lattice_vectors();
        let det = t1[0] * t2[1] - t1[1] * t2[0];
        [(x[0] * t2[1] - x[1] * t2[0]) / det, (t1[0] * x[1] - t1[1] * x[0]) / det]
    }

    pub fn point(&self, i: usize, j: usize) -> [f64; 2] {
        self.frac_to_point([i as f64 / self.n1 as f64, j as f64 / self.n2 as f64])
    }

    pub fn point_at(&self, p: usize) -> [f64; 2] {
        let (i, j) = self.coords(p);
        self.point(i, j)
    }

    /// `T^{-T}` for `T = [t1 t2]`: row `c` holds the coefficients of `d/du1, d/du2` in `d/dx_c`.
    pub fn lattice_inverse_transpose(&self) -> [[f64; 2]; 2] {
        let [t1, t2] = self.lattice_vectors();
        let det = t1[0] * t2[1] - t1[1] * t2[0];
        // T^{-1} = [[t2y, -t2x], [-t1y, t1x]] / det, transposed.
        [[t2[1] / det, -t1[1] / det], [-t2[0] / det, t1[0] / det]]
    }

    /// `J^{-T}` for the step matrix `J = [delta1 delta2]`: maps step derivatives to Cartesian.
    pub fn step_inverse_transpose(&self) -> [[f64; 2]; 2] {
        let m = self.lattice_inverse_transpose();
        let (a, b) = (self.n1 as f64, self.n2 as f64);
        [[m[0][0] * a, m[0][1] * b], [m[1][0] * a, m[1][1] * b]]
    }

    /// Inverse metric `(J^T J)^{-1}` of the step basis.
    pub fn step_metric_inverse(&self) -> [[f64; 2]; 2] {
        let m = self.step_inverse_transpose();
        let mut g = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                g[i][j] = m[0][i] * m[0][j] + m[1][i] * m[1][j];
            }
        }
        g
    }

    pub fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GridMismatch)
        }
    }
}

/// Equal-weight quadrature of a real integrand over the cell.
pub fn integrate(grid: &GridSpec, values: &[f64]) -> f64 {
    values.iter().sum::<f64>() * grid.quad_weight()
}

pub fn integrate_complex(grid: &GridSpec, values: &[Complex64]) -> Complex64 {
    values.iter().sum::<Complex64>() * grid.quad_weight()
}

/// Quadrature inner product `int conj(u) v`.
pub fn inner(grid: &GridSpec, u: &[Complex64], v: &[Complex64]) -> Complex64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum::<Complex64>() * grid.quad_weight()
}

pub fn norm_sq(grid: &GridSpec, u: &[Complex64]) -> f64 {
    u.iter().map(|a| a.norm_sqr()).sum::<f64>() * grid.quad_weight()
}

/// Order parameter sampled over one cell, obeying `psi(x + t) = exp(i (b/2) t ^ x) psi(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasiPeriodicField {
    grid: GridSpec,
    values: Vec<Complex64>,
}

impl QuasiPeriodicField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![Complex64::default(); grid.len()],
        }
    }

    pub fn from_values(grid: GridSpec, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn norm_sq(&self) -> f64 {
        norm_sq(&self.grid, &self.values)
    }

    pub fn inner(&self, other: &Self) -> Result<Complex64> {
        self.grid.check_same(&other.grid)?;
        Ok(inner(&self.grid, &self.values, &other.values))
    }

    /// `|psi|^2` at every grid point.
    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.norm_sqr()).collect()
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// Sample at an arbitrary integer index, applying the boundary phase.
    pub fn extended(&self, i: i64, j: i64) -> Complex64 {
        stencil::extended_value(&self.grid, &self.values, i, j, [0.0, 0.0])
    }

    /// Value at an arbitrary point by gauge-covariant Lagrange interpolation of width `m`.
    pub fn value_at(&self, x: [f64; 2], m: usize) -> Complex64 {
        interpolate_covariant(&self.grid, &self.values, x, m, [0.0, 0.0])
    }

    /// Relative mismatch between samples carried across the cell edge by the boundary
    /// phase and one-sided extrapolation from the interior. Small for genuine lattice
    /// states, order one for fields that ignore the boundary condition.
    pub fn wrap_residual(&self) -> f64 {
        wrap_residual(&self.grid, &self.values, [0.0, 0.0])
    }
}

/// Samples a closed-form function on the grid.
pub fn sample<F: Fn([f64; 2]) -> Complex64>(f: F, grid: &GridSpec) -> QuasiPeriodicField {
    let values = (0..grid.len()).map(|p| f(grid.point_at(p))).collect();
    QuasiPeriodicField { grid: *grid, values }
}

/// Largest relative violation of `f(x + t) = exp(i (b/2) t ^ x) f(x)` for `t = t1, t2`
/// at the grid points on the two cell edges.
pub fn quasi_periodicity_residual<F: Fn([f64; 2]) -> Complex64>(f: F, grid: &GridSpec) -> f64 {
    let [t1, t2] = grid.lattice_vectors();
    let half_b = 0.5 * grid.flux_density();
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    let mut check = |x: [f64; 2], t: [f64; 2]| {
        let fx = f(x);
        let shifted = f([x[0] + t[0], x[1] + t[1]]);
        let expect = fx * Complex64::from_polar(1.0, half_b * stencil::wedge(t, x));
        worst = worst.max((shifted - expect).norm());
        scale = scale.max(fx.norm());
    };
    for j in 0..grid.n2() {
        check(grid.point(0, j), t1);
    }
    for i in 0..grid.n1() {
        check(grid.point(i, 0), t2);
    }
    if scale == 0.0 {
        0.0
    } else {
        worst / scale
    }
}

pub(crate) fn wrap_residual(grid: &GridSpec, values: &[Complex64], twist: [f64; 2]) -> f64 {
    let order = 8usize;
    let xs: Vec<f64> = (0..order).map(|k| k as f64).collect();
    // Extrapolate to index -1 from indices 0..order and compare with the wrapped sample.
    let w = stencil::fornberg_weights(-1.0, &xs, 0)[0].clone();
    let scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let half_b = 0.5 * grid.flux_density();
    let steps = grid.steps();
    let mut worst = 0.0f64;
    for d in 0..2 {
        let lines = if d == 0 { grid.n2() } else { grid.n1() };
        for l in 0..lines {
            let base = |k: i64| if d == 0 { (k, l as i64) } else { (l as i64, k) };
            // Transport all samples to the line origin so the extrapolated function is smooth.
            let (i0, j0) = base(0);
            let x0 = grid.point(i0 as usize, j0 as usize);
            let transport = half_b * stencil::wedge(x0, steps[d]);
            let sample = |k: i64| {
                let (i, j) = base(k);
                stencil::extended_value(grid, values, i, j, twist)
                    * Complex64::from_polar(1.0, -(k as f64) * transport)
            };
            let extrap: Complex64 = (0..order).map(|k| sample(k as i64) * w[k]).sum();
            worst = worst.max((extrap - sample(-1)).norm());
        }
    }
    worst / scale
}

/// Lagrange interpolation of a quasi-periodic field at `x`, done in the gauge centred at `x`
/// so the interpolated function carries no background phase winding.
pub(crate) fn interpolate_covariant(
    grid: &GridSpec,
    values: &[Complex64],
    x: [f64; 2],
    m: usize,
    twist: [f64; 2],
) -> Complex64 {
    let u = grid.point_to_frac(x);
    let g = [u[0] * grid.n1() as f64, u[1] * grid.n2() as f64];
    let half_b = 0.5 * grid.flux_density();
    let lo = [
        g[0].floor() as i64 - (m as i64 / 2 - 1),
        g[1].floor() as i64 - (m as i64 / 2 - 1),
    ];
    let nodes: Vec<f64> = (0..m).map(|k| k as f64).collect();
    let w1 = stencil::fornberg_weights(g[0] - lo[0] as f64, &nodes, 0)[0].clone();
    let w2 = stencil::fornberg_weights(g[1] - lo[1] as f64, &nodes, 0)[0].clone();
    let mut acc = Complex64::default();
    for (b, wb) in w2.iter().enumerate() {
        for (a, wa) in w1.iter().enumerate() {
            let (i, j) = (lo[0] + a as i64, lo[1] + b as i64);
            let y = grid.frac_to_point([i as f64 / grid.n1() as f64, j as f64 / grid.n2() as f64]);
            let v = stencil::extended_value(grid, values, i, j, twist);
            acc += v * Complex64::from_polar(wa * wb, -half_b * stencil::wedge(x, y));
        }
    }
    acc
}

/// Real periodic vector field, stored by Cartesian components.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: GridSpec,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl VectorField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            x: vec![0.0; grid.len()],
            y: vec![0.0; grid.len()],
        }
    }

    pub fn from_components(grid: GridSpec, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != grid.len() || y.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(Self { grid, x, y })
    }

    pub fn from_fn<F: Fn([f64; 2]) -> [f64; 2]>(grid: GridSpec, f: F) -> Self {
        let mut out = Self::zeros(grid);
        for p in 0..grid.len() {
            let v = f(grid.point_at(p));
            out.x[p] = v[0];
            out.y[p] = v[1];
        }
        out
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Cell average of each component.
    pub fn mean(&self) -> [f64; 2] {
        let n = self.grid.len() as f64;
        [self.x.iter().sum::<f64>() / n, self.y.iter().sum::<f64>() / n]
    }

    /// `|v|^2` at every grid point.
    pub fn norm_sq_pointwise(&self) -> Vec<f64> {
        self.x.iter().zip(&self.y).map(|(a, b)| a * a + b * b).collect()
    }

    /// Quadrature L2 norm.
    pub fn norm(&self) -> f64 {
        integrate(&self.grid, &self.norm_sq_pointwise()).sqrt()
    }
}

/// Periodic, mean-zero, divergence-free perturbation `a = curl* h = (d2 h, -d1 h)`,
/// stored through its stream function.
#[derive(Clone, Debug, PartialEq)]
pub struct GaugePerturbation {
    grid: GridSpec,
    h: Vec<f64>,
}

impl GaugePerturbation {
    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            h: vec![0.0; grid.len()],
        }
    }

    /// Wraps a stream function, removing its mean and unresolved Nyquist modes.
    pub fn from_stream(grid: GridSpec, h: Vec<f64>) -> Result<Self> {
        if h.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        let h = Spectral::new(grid).project(&h);
        Ok(Self { grid, h })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn stream(&self) -> &[f64] {
        &self.h
    }

    pub fn potential(&self) -> VectorField {
        Spectral::new(self.grid).curl_star(&self.h)
    }
}

/// `(d/dx1 - i A1, d/dx2 - i A2) psi` with `A = A0 + a`.
pub fn covariant_gradient(
    psi: &QuasiPeriodicField,
    a: Option<&VectorField>,
) -> Result<[Vec<Complex64>; 2]> {
    let grid = *psi.grid();
    if let Some(a) = a {
        grid.check_same(a.grid())?;
    }
    let st = CovariantStencil::new(grid, DEFAULT_RADIUS);
    Ok(covariant_gradient_with(&st, psi.values(), a))
}

pub(crate) fn covariant_gradient_with(
    st: &CovariantStencil,
    psi: &[Complex64],
    a: Option<&VectorField>,
) -> [Vec<Complex64>; 2] {
    let grid = *st.grid();
    let len = grid.len();
    let mut d1 = vec![Complex64::default(); len];
    let mut d2 = vec![Complex64::default(); len];
    st.first(0, psi, &mut d1);
    st.first(1, psi, &mut d2);
    let m = grid.step_inverse_transpose();
    let mut gx = vec![Complex64::default(); len];
    let mut gy = vec![Complex64::default(); len];
    for p in 0..len {
        gx[p] = d1[p] * m[0][0] + d2[p] * m[0][1];
        gy[p] = d1[p] * m[1][0] + d2[p] * m[1][1];
        if let Some(a) = a {
            gx[p] -= Complex64::i() * a.x[p] * psi[p];
            gy[p] -= Complex64::i() * a.y[p] * psi[p];
        }
    }
    [gx, gy]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: u32, size: usize) -> GridSpec {
        GridSpec::uniform(LatticeShape::triangular(), n, size).unwrap()
    }

    #[test]
    fn rejects_odd_or_tiny_grids() {
        let s = LatticeShape::square();
        assert!(GridSpec::new(s, 1, 6, 8).is_err());
        assert!(GridSpec::new(s, 1, 9, 8).is_err());
        assert!(GridSpec::new(s, 0, 8, 8).is_err());
    }

    #[test]
    fn integral_of_one_is_cell_area() {
        let g = grid(1, 16);
        assert!((integrate(&g, &vec![1.0; g.len()]) - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn reciprocal_plane_waves_integrate_to_zero() {
        let g = grid(1, 32);
        let m = g.lattice_inverse_transpose();
        for (k1, k2) in [(1.0, 0.0), (0.0, 3.0), (-2.0, 5.0)] {
            let kv = [2.0 * PI * (m[0][0] * k1 + m[0][1] * k2), 2.0 * PI * (m[1][0] * k1 + m[1][1] * k2)];
            let f = sample(|x| Complex64::from_polar(1.0, kv[0] * x[0] + kv[1] * x[1]), &g);
            assert!(integrate_complex(&g, f.values()).norm() < 1e-12);
        }
    }

    #[test]
    fn frac_round_trip() {
        let g = grid(2, 16);
        let x = g.frac_to_point([0.3, -0.7]);
        let u = g.point_to_frac(x);
        assert!((u[0] - 0.3).abs() < 1e-14 && (u[1] + 0.7).abs() < 1e-14);
    }

    #[test]
    fn constants_fail_the_quasi_periodicity_check() {
        let g = grid(1, 16);
        assert!(quasi_periodicity_residual(|_| Complex64::new(1.0, 0.0), &g) > 0.1);
        let f = sample(|_| Complex64::new(1.0, 0.0), &g);
        assert!(f.wrap_residual() > 0.1);
        assert!(quasi_periodicity_residual(|_| Complex64::default(), &g) == 0.0);
    }

    #[test]
    fn zero_field_has_zero_gradient() {
        let g = grid(1, 16);
        let [gx, gy] = covariant_gradient(&QuasiPeriodicField::zeros(g), None).unwrap();
        assert!(gx.iter().chain(&gy).all(|v| v.norm() == 0.0));
    }

    #[test]
    fn step_metric_matches_direct_product() {
        let g = grid(1, 16);
        let m = g.step_inverse_transpose();
        let steps = g.steps();
        // J^{-T} J^T = I.
        for r in 0..2 {
            for c in 0..2 {
                let v = m[r][0] * steps[0][c] + m[r][1] * steps[1][c];
                assert!((v - if r == c { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }
}
