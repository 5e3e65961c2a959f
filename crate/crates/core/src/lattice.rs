//! Lattice shapes, cell geometry and flux bookkeeping.
//!
//! Everything here works in rescaled units: a cell of shape `tau` has basis
//! `t1 = r (1, 0)`, `t2 = r (Re tau, Im tau)` with `r = sqrt(2 pi / Im tau)`,
//! so its area is always `2 pi`. A state with `n` flux quanta per cell carries
//! the constant background field `curl A0 = n`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{GridSpec, QuasiPeriodicField, VectorField};
use crate::spectral::Spectral;

/// Tolerance used to decide `|tau| = 1` ties on the unit circle.
const UNIT_CIRCLE_TOL: f64 = 1e-13;

/// Shape of a two-dimensional lattice, described by its modular parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeShape {
    tau: Complex64,
    r_tau: f64,
    raw: Complex64,
    reflected: bool,
    reduction: [[i64; 2]; 2],
}

impl LatticeShape {
    /// Builds a shape from `tau` as given, without fundamental-domain reduction.
    pub fn new(tau: Complex64) -> Result<Self> {
        if !(tau.im > 0.0) || !tau.re.is_finite() || !tau.im.is_finite() {
            return Err(if tau.im == 0.0 {
                Error::DegenerateLattice
            } else {
                Error::InvalidParameter(format!("Im(tau) must be positive, got {tau}"))
            });
        }
        Ok(Self {
            tau,
            r_tau: (2.0 * PI / tau.im).sqrt(),
            raw: tau,
            reflected: false,
            reduction: [[1, 0], [0, 1]],
        })
    }

    /// Square lattice, `tau = i`.
    pub fn square() -> Self {
        Self::new(Complex64::i()).expect("tau = i is valid")
    }

    /// Triangular (hexagonal) lattice, `tau = exp(i pi / 3)`.
    pub fn triangular() -> Self {
        Self::new(Complex64::from_polar(1.0, PI / 3.0)).expect("valid")
    }

    pub fn tau(&self) -> Complex64 {
        self.tau
    }

    /// The value this shape was constructed from, before any reduction.
    pub fn raw_tau(&self) -> Complex64 {
        self.raw
    }

    /// True when the raw value had `Im tau < 0` and was conjugated.
    pub fn reflected(&self) -> bool {
        self.reflected
    }

    /// `SL(2, Z)` matrix `[[a, b], [c, d]]` with `tau = (a tau0 + b) / (c tau0 + d)`,
    /// where `tau0` is the (possibly conjugated) raw value.
    pub fn reduction(&self) -> [[i64; 2]; 2] {
        self.reduction
    }

    /// Cell side length `r = sqrt(2 pi / Im tau)`.
    pub fn r_tau(&self) -> f64 {
        self.r_tau
    }

    /// Lattice basis `(t1, t2)`.
    pub fn basis(&self) -> [[f64; 2]; 2] {
        let r = self.r_tau;
        [[r, 0.0], [r * self.tau.re, r * self.tau.im]]
    }

    /// Cell area, `r^2 Im tau = 2 pi`.
    pub fn cell_area(&self) -> f64 {
        self.r_tau * self.r_tau * self.tau.im
    }

    /// Whether `tau` satisfies the three fundamental-domain conditions.
    pub fn is_normalized(&self) -> bool {
        in_fundamental_domain(self.tau)
    }
}

/// Checks `|tau| >= 1`, `Im tau > 0`, `-1/2 < Re tau <= 1/2` and `Re tau >= 0` on `|tau| = 1`.
pub fn in_fundamental_domain(tau: Complex64) -> bool {
    let modulus = tau.norm();
    tau.im > 0.0
        && modulus >= 1.0 - UNIT_CIRCLE_TOL
        && tau.re > -0.5
        && tau.re <= 0.5 + 1e-15
        && !((modulus - 1.0).abs() <= UNIT_CIRCLE_TOL && tau.re < -1e-15)
}

/// Reduces `tau_raw` to the fundamental domain by iterated translations and inversions.
pub fn normalize_shape(tau_raw: Complex64) -> Result<LatticeShape> {
    if tau_raw.im == 0.0 {
        return Err(Error::DegenerateLattice);
    }
    if !tau_raw.re.is_finite() || !tau_raw.im.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite tau {tau_raw}")));
    }
    let reflected = tau_raw.im < 0.0;
    let start = if reflected { tau_raw.conj() } else { tau_raw };

    let mut tau = start;
    // Track tau = (a tau0 + b) / (c tau0 + d).
    let mut m = [[1i64, 0], [0, 1]];
    for _ in 0..10_000 {
        let k = (tau.re - 0.5).ceil();
        if k != 0.0 {
            tau -= k;
            let k = k as i64;
            m = [[m[0][0] - k * m[1][0], m[0][1] - k * m[1][1]], m[1]];
        }
        if tau.norm_sqr() < 1.0 - UNIT_CIRCLE_TOL {
            tau = -1.0 / tau;
            m = [[-m[1][0], -m[1][1]], m[0]];
        } else {
            break;
        }
    }
    if (tau.norm() - 1.0).abs() <= UNIT_CIRCLE_TOL && tau.re < 0.0 {
        tau = -1.0 / tau;
        m = [[-m[1][0], -m[1][1]], m[0]];
        // -1/tau = -conj(tau) on the unit circle; clean up roundoff.
        tau = Complex64::new(tau.re.abs(), tau.im);
    }
    if tau.re <= -0.5 {
        tau += 1.0;
        m = [[m[0][0] + m[1][0], m[0][1] + m[1][1]], m[1]];
    }
    let mut shape = LatticeShape::new(tau)?;
    shape.raw = tau_raw;
    shape.reflected = reflected;
    shape.reduction = m;
    Ok(shape)
}

/// Flux and field parameters of the rescaled problem.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluxParameters {
    pub n: u32,
    pub b: f64,
    pub kappa: f64,
}

impl FluxParameters {
    pub fn new(n: u32, b: f64, kappa: f64) -> Result<Self> {
        if n == 0 || !(b > 0.0) || !(kappa > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "need n >= 1, b > 0, kappa > 0 (got n = {n}, b = {b}, kappa = {kappa})"
            )));
        }
        Ok(Self { n, b, kappa })
    }

    /// Parameters with `b` recovered from `lambda = kappa^2 n / b`.
    pub fn from_lambda(n: u32, lambda: f64, kappa: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!("lambda must be positive, got {lambda}")));
        }
        Self::new(n, kappa * kappa * n as f64 / lambda, kappa)
    }

    pub fn lambda(&self) -> f64 {
        self.kappa * self.kappa * self.n as f64 / self.b
    }

    /// Distance below the critical field, `mu = kappa^2 - b`.
    pub fn mu(&self) -> f64 {
        self.kappa * self.kappa - self.b
    }
}

/// Cell data for a given shape and flux index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellGeometry {
    pub t1: [f64; 2],
    pub t2: [f64; 2],
    pub area: f64,
    /// Total flux through the cell, `2 pi n`.
    pub flux: f64,
}

pub fn cell_geometry(shape: &LatticeShape, n: u32) -> Result<CellGeometry> {
    if n == 0 {
        return Err(Error::InvalidParameter("flux index n must be >= 1".into()));
    }
    let [t1, t2] = shape.basis();
    let area = t1[0] * t2[1] - t1[1] * t2[0];
    Ok(CellGeometry {
        t1,
        t2,
        area,
        flux: n as f64 * area,
    })
}

/// Shear taking the square lattice of side `sqrt(2 pi)` onto the lattice of shape `tau`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShearMap {
    m: [[f64; 2]; 2],
    inv: [[f64; 2]; 2],
}

impl ShearMap {
    pub fn new(shape: &LatticeShape) -> Self {
        let tau = shape.tau();
        let s = 1.0 / tau.im.sqrt();
        let m = [[s, s * tau.re], [0.0, s * tau.im]];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let inv = [
            [m[1][1] / det, -m[0][1] / det],
            [-m[1][0] / det, m[0][0] / det],
        ];
        Self { m, inv }
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        self.m
    }

    pub fn det(&self) -> f64 {
        self.m[0][0] * self.m[1][1] - self.m[0][1] * self.m[1][0]
    }

    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        mat_vec(&self.m, v)
    }

    pub fn apply_inverse(&self, v: [f64; 2]) -> [f64; 2] {
        mat_vec(&self.inv, v)
    }

    pub fn apply_transpose(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.m[0][0] * v[0] + self.m[1][0] * v[1],
            self.m[0][1] * v[0] + self.m[1][1] * v[1],
        ]
    }

    pub fn apply_inverse_transpose(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.inv[0][0] * v[0] + self.inv[1][0] * v[1],
            self.inv[0][1] * v[0] + self.inv[1][1] * v[1],
        ]
    }
}

fn mat_vec(m: &[[f64; 2]; 2], v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

/// The grid of the square cell matching `grid` point for point.
pub fn square_grid(grid: &GridSpec) -> GridSpec {
    GridSpec::new(LatticeShape::square(), grid.n(), grid.n1(), grid.n2())
        .expect("dimensions already validated")
}

/// Pulls a scalar field on the `tau` cell back to the square cell: `psi~(x) = psi(m_tau x)`.
///
/// The grids are images of each other under the shear, so samples carry over unchanged.
pub fn shear_to_square(field: &QuasiPeriodicField) -> QuasiPeriodicField {
    QuasiPeriodicField::from_values(square_grid(field.grid()), field.values().to_vec())
        .expect("same length")
}

/// Inverse of [`shear_to_square`] onto the lattice of shape `shape`.
pub fn shear_from_square(field: &QuasiPeriodicField, shape: &LatticeShape) -> QuasiPeriodicField {
    let g = field.grid();
    let grid = GridSpec::new(*shape, g.n(), g.n1(), g.n2()).expect("validated");
    QuasiPeriodicField::from_values(grid, field.values().to_vec()).expect("same length")
}

/// Vector field pull-back `A~(x) = m_tau^T A(m_tau x)`.
pub fn shear_vector_to_square(field: &VectorField) -> VectorField {
    let map = ShearMap::new(&field.grid().shape());
    let grid = square_grid(field.grid());
    let mut out = VectorField::zeros(grid);
    for p in 0..grid.len() {
        let v = map.apply_transpose([field.x[p], field.y[p]]);
        out.x[p] = v[0];
        out.y[p] = v[1];
    }
    out
}

pub fn shear_vector_from_square(field: &VectorField, shape: &LatticeShape) -> VectorField {
    let map = ShearMap::new(shape);
    let g = field.grid();
    let grid = GridSpec::new(*shape, g.n(), g.n1(), g.n2()).expect("validated");
    let mut out = VectorField::zeros(grid);
    for p in 0..grid.len() {
        let v = map.apply_inverse_transpose([field.x[p], field.y[p]]);
        out.x[p] = v[0];
        out.y[p] = v[1];
    }
    out
}

/// Magnetic flux `int_cell curl A` of a vector potential sampled on the cell grid.
///
/// `A` is modelled as a linear function of the cell coordinates plus a periodic field,
/// and only the linear part carries flux. Its coefficients are fitted by least squares
/// so that the remainder has no high-frequency content, which is where the sawtooth
/// left by a wrong fit would show up.
pub fn flux_of(field: &VectorField) -> f64 {
    let grid = *field.grid();
    let (n1, n2) = (grid.n1(), grid.n2());
    let sp = Spectral::new(grid);
    let high = |k: usize, n: usize| 4 * k.min(n - k) > n;
    let mask: Vec<bool> = (0..grid.len())
        .map(|p| {
            let (i, j) = grid.coords(p);
            high(i, n1) || high(j, n2)
        })
        .collect();
    let saw = [
        sp.forward(&(0..grid.len()).map(|p| grid.coords(p).0 as f64 / n1 as f64).collect::<Vec<_>>()),
        sp.forward(&(0..grid.len()).map(|p| grid.coords(p).1 as f64 / n2 as f64).collect::<Vec<_>>()),
    ];
    let dot = |a: &[Complex64], b: &[Complex64]| -> f64 {
        (0..a.len()).filter(|&k| mask[k]).map(|k| (a[k].conj() * b[k]).re).sum()
    };
    let gram = [[dot(&saw[0], &saw[0]), dot(&saw[0], &saw[1])], [dot(&saw[1], &saw[0]), dot(&saw[1], &saw[1])]];
    let det = gram[0][0] * gram[1][1] - gram[0][1] * gram[1][0];
    // Slopes of a component along u1 and u2.
    let slopes = |values: &[f64]| -> [f64; 2] {
        let v = sp.forward(values);
        let r = [dot(&saw[0], &v), dot(&saw[1], &v)];
        [
            (gram[1][1] * r[0] - gram[0][1] * r[1]) / det,
            (gram[0][0] * r[1] - gram[1][0] * r[0]) / det,
        ]
    };
    let (mx, my) = (slopes(&field.x), slopes(&field.y));
    // grad = T^{-T} (d/du1, d/du2); curl A = d1 A2 - d2 A1.
    let jinv_t = grid.lattice_inverse_transpose();
    let curl = (0..2).map(|d| jinv_t[0][d] * my[d] - jinv_t[1][d] * mx[d]).sum::<f64>();
    curl * grid.cell_area()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Brute-force search over short words in S and T for a matrix mapping tau0 to target.
    fn related_by_small_word(tau0: Complex64, target: Complex64) -> bool {
        for a in -6i64..=6 {
            for b in -6i64..=6 {
                for cc in -6i64..=6 {
                    for d in -6i64..=6 {
                        if a * d - b * cc != 1 {
                            continue;
                        }
                        let z = (tau0 * a as f64 + b as f64) / (tau0 * cc as f64 + d as f64);
                        if (z - target).norm() < 1e-12 {
                            return true;
                        }
                    }
                }
            }
        }
        false
    }

    #[test]
    fn already_normalized_is_unchanged() {
        let s = normalize_shape(c(0.0, 1.0)).unwrap();
        assert_eq!(s.tau(), c(0.0, 1.0));
        assert!(!s.reflected());
    }

    #[test]
    fn translation_by_minus_one() {
        let s = normalize_shape(c(1.5, 3f64.sqrt() / 2.0)).unwrap();
        assert!((s.tau() - c(0.5, 3f64.sqrt() / 2.0)).norm() < 1e-15);
    }

    #[test]
    fn small_tau_reduces_to_an_equivalent_point() {
        let raw = c(0.3, 0.4);
        let s = normalize_shape(raw).unwrap();
        assert!(in_fundamental_domain(s.tau()), "{}", s.tau());
        assert!(related_by_small_word(raw, s.tau()));
        let [[a, b], [cc, d]] = s.reduction();
        assert_eq!(a * d - b * cc, 1);
        let z = (raw * a as f64 + b as f64) / (raw * cc as f64 + d as f64);
        assert!((z - s.tau()).norm() < 1e-12);
    }

    #[test]
    fn unit_circle_tie_goes_to_positive_real_part() {
        let raw = Complex64::from_polar(1.0, 2.0 * PI / 3.0 - 0.2);
        let s = normalize_shape(raw).unwrap();
        assert!(s.tau().re >= 0.0);
        assert!((s.tau().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lower_half_plane_is_reflected() {
        let s = normalize_shape(c(0.2, -1.3)).unwrap();
        assert!(s.reflected());
        assert!((s.tau() - c(0.2, 1.3)).norm() < 1e-15);
    }

    #[test]
    fn degenerate_tau_rejected() {
        assert_eq!(normalize_shape(c(0.4, 0.0)), Err(Error::DegenerateLattice));
    }

    #[test]
    fn geometry_examples() {
        let g = cell_geometry(&LatticeShape::square(), 1).unwrap();
        assert!((g.t1[0] - 2.50663).abs() < 1e-5);
        assert!((g.area - 2.0 * PI).abs() < 1e-12);
        let g = cell_geometry(&LatticeShape::triangular(), 1).unwrap();
        assert!((g.t1[0] - 2.69355).abs() < 1e-5);
        assert!((g.area - 2.0 * PI).abs() < 1e-12);
        let g = cell_geometry(&LatticeShape::square(), 2).unwrap();
        assert!((g.flux - 4.0 * PI).abs() < 1e-12);
        assert!(cell_geometry(&LatticeShape::square(), 0).is_err());
    }

    #[test]
    fn flux_parameters_relations() {
        let p = FluxParameters::from_lambda(1, 1.05, 2f64.sqrt()).unwrap();
        assert!((p.lambda() - 1.05).abs() < 1e-14);
        assert!((p.mu() - (2.0 - 2.0 / 1.05)).abs() < 1e-14);
        assert!(FluxParameters::new(1, -1.0, 1.0).is_err());
    }

    #[test]
    fn shear_is_identity_for_square() {
        let m = ShearMap::new(&LatticeShape::square()).matrix();
        assert_eq!(m, [[1.0, 0.0], [0.0, 1.0]]);
    }

    #[test]
    fn shear_maps_square_basis_onto_lattice_basis() {
        let shape = LatticeShape::new(c(0.31, 1.7)).unwrap();
        let map = ShearMap::new(&shape);
        let s = (2.0 * PI).sqrt();
        let [t1, t2] = shape.basis();
        let a = map.apply([s, 0.0]);
        let b = map.apply([0.0, s]);
        assert!((a[0] - t1[0]).abs() < 1e-12 && (a[1] - t1[1]).abs() < 1e-12);
        assert!((b[0] - t2[0]).abs() < 1e-12 && (b[1] - t2[1]).abs() < 1e-12);
    }
}
