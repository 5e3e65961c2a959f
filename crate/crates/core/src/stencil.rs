//! Finite-difference weights and gauge-covariant stencils on the cell grid.
//!
//! Covariant differences use Peierls transport: along the straight segment from
//! `x` to `x + s d` the background potential `A0 = (n/2) x^perp` integrates to
//! `(n/2) s (x ^ d)`, so `g(s) = exp(-i (n/2) s (x ^ d)) psi(x + s d)` is smooth in `s`
//! and its ordinary derivatives at `s = 0` are `(d . grad_A0)^k psi(x)`.

use num_complex::Complex64;

use crate::field::GridSpec;

/// Fornberg's algorithm: weights for derivatives `0..=max_deriv` at `x0` from nodes `xs`.
///
/// Returns `w[m][j]`, the weight of node `j` in the `m`-th derivative.
pub fn fornberg_weights(x0: f64, xs: &[f64], max_deriv: usize) -> Vec<Vec<f64>> {
    let n = xs.len();
    let mut c = vec![vec![0.0; n]; max_deriv + 1];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(max_deriv);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Central-difference weights of half-width `radius` for the first and second derivative
/// on a unit-spaced grid, indexed by offset `k + radius`.
pub fn central_weights(radius: usize) -> (Vec<f64>, Vec<f64>) {
    let xs: Vec<f64> = (-(radius as isize)..=radius as isize).map(|k| k as f64).collect();
    let w = fornberg_weights(0.0, &xs, 2);
    (w[1].clone(), w[2].clone())
}

/// Default stencil half-width (eighth-order central differences).
pub const DEFAULT_RADIUS: usize = 4;

/// Phase picked up by a quasi-periodic field between the base cell and the cell
/// translated by `p t1 + q t2`, evaluated at base point `y`:
/// `psi(y + p t1 + q t2) = exp(i phase) psi(y)`.
///
/// `twist` holds the extra constants `C_t` of a cocycle `(b/2) t ^ x + C_t`.
pub fn cell_translation_phase(grid: &GridSpec, y: [f64; 2], p: i64, q: i64, twist: [f64; 2]) -> f64 {
    let half_b = 0.5 * grid.flux_density();
    let [t1, t2] = grid.lattice_vectors();
    let t1_y = wedge(t1, y);
    let t2_y = wedge(t2, y);
    let area = wedge(t1, t2);
    half_b * (q as f64 * t2_y + p as f64 * t1_y)
        + half_b * area * (p * q) as f64
        + p as f64 * twist[0]
        + q as f64 * twist[1]
}

/// `a ^ b = a1 b2 - a2 b1`.
#[inline]
pub fn wedge(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Value of a quasi-periodic field at an arbitrary integer grid index.
pub fn extended_value(grid: &GridSpec, values: &[Complex64], i: i64, j: i64, twist: [f64; 2]) -> Complex64 {
    let (n1, n2) = (grid.n1() as i64, grid.n2() as i64);
    let p = i.div_euclid(n1);
    let q = j.div_euclid(n2);
    let (bi, bj) = (i.rem_euclid(n1) as usize, j.rem_euclid(n2) as usize);
    let v = values[grid.index(bi, bj)];
    if p == 0 && q == 0 {
        return v;
    }
    let y = grid.point(bi, bj);
    v * Complex64::from_polar(1.0, cell_translation_phase(grid, y, p, q, twist))
}

/// Precomputed covariant difference tables along the two grid directions.
///
/// For direction `d` with grid step `delta_d = t_d / N_d`, `first` applies
/// `delta_d . grad_A0` and `second` applies `(delta_d . grad_A0)^2`, both in units of
/// one grid step.
#[derive(Clone, Debug)]
pub struct CovariantStencil {
    grid: GridSpec,
    width: usize,
    src: [Vec<u32>; 2],
    first: [Vec<Complex64>; 2],
    second: [Vec<Complex64>; 2],
}

impl CovariantStencil {
    pub fn new(grid: GridSpec, radius: usize) -> Self {
        Self::with_twist(grid, radius, [0.0, 0.0])
    }

    pub fn with_twist(grid: GridSpec, radius: usize, twist: [f64; 2]) -> Self {
        assert!(radius >= 1 && 2 * radius < grid.n1().min(grid.n2()), "stencil wider than grid");
        let (w1, w2) = central_weights(radius);
        let width = 2 * radius + 1;
        let half_b = 0.5 * grid.flux_density();
        let steps = grid.steps();
        let len = grid.len();
        let mut src: [Vec<u32>; 2] = [vec![0; len * width], vec![0; len * width]];
        let mut first: [Vec<Complex64>; 2] = [
            vec![Complex64::default(); len * width],
            vec![Complex64::default(); len * width],
        ];
        let mut second = first.clone();
        let (n1, n2) = (grid.n1() as i64, grid.n2() as i64);
        for d in 0..2 {
            for j in 0..grid.n2() {
                for i in 0..grid.n1() {
                    let p = grid.index(i, j);
                    let x = grid.point(i, j);
                    let transport = half_b * wedge(x, steps[d]);
                    for (slot, k) in (-(radius as i64)..=radius as i64).enumerate() {
                        let (ii, jj) = if d == 0 { (i as i64 + k, j as i64) } else { (i as i64, j as i64 + k) };
                        let pc = ii.div_euclid(n1);
                        let qc = jj.div_euclid(n2);
                        let (bi, bj) = (ii.rem_euclid(n1) as usize, jj.rem_euclid(n2) as usize);
                        let wrap = if pc == 0 && qc == 0 {
                            0.0
                        } else {
                            cell_translation_phase(&grid, grid.point(bi, bj), pc, qc, twist)
                        };
                        let phase = Complex64::from_polar(1.0, wrap - k as f64 * transport);
                        let e = p * width + slot;
                        src[d][e] = grid.index(bi, bj) as u32;
                        first[d][e] = phase * w1[slot];
                        second[d][e] = phase * w2[slot];
                    }
                }
            }
        }
        Self {
            grid,
            width,
            src,
            first,
            second,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn apply_table(&self, table: &[Complex64], src: &[u32], v: &[Complex64], out: &mut [Complex64]) {
        let w = self.width;
        for (p, o) in out.iter_mut().enumerate() {
            let row = &table[p * w..(p + 1) * w];
            let idx = &src[p * w..(p + 1) * w];
            let mut acc = Complex64::default();
            for k in 0..w {
                acc += row[k] * v[idx[k] as usize];
            }
            *o = acc;
        }
    }

    /// `out = (delta_d . grad_A0) v`.
    pub fn first(&self, d: usize, v: &[Complex64], out: &mut [Complex64]) {
        self.apply_table(&self.first[d], &self.src[d], v, out);
    }

    /// `out = (delta_d . grad_A0)^2 v` with the compact second-difference stencil.
    pub fn second(&self, d: usize, v: &[Complex64], out: &mut [Complex64]) {
        self.apply_table(&self.second[d], &self.src[d], v, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fornberg_reproduces_classic_weights() {
        let (w1, w2) = central_weights(1);
        assert_eq!(w1, vec![-0.5, 0.0, 0.5]);
        assert_eq!(w2, vec![1.0, -2.0, 1.0]);
        let (w1, _) = central_weights(2);
        let expect = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
        for (a, b) in w1.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn weights_are_exact_on_polynomials() {
        let (w1, w2) = central_weights(4);
        // d/dx x = 1 and d2/dx2 x^2 = 2 at the origin.
        let d1: f64 = w1.iter().enumerate().map(|(s, w)| w * (s as f64 - 4.0)).sum();
        let d2: f64 = w2.iter().enumerate().map(|(s, w)| w * (s as f64 - 4.0).powi(2)).sum();
        assert!((d1 - 1.0).abs() < 1e-12);
        assert!((d2 - 2.0).abs() < 1e-12);
    }
}
