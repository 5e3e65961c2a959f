//! Fourier operators for real doubly periodic fields on the cell grid.
//!
//! A mode `exp(2 pi i (m1 u1 + m2 u2))` has Cartesian wavevector `g = 2 pi T^{-T} m`.
//! First derivatives drop the Nyquist modes, which have no resolved odd part.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::field::{GridSpec, VectorField};

pub struct Spectral {
    grid: GridSpec,
    fwd1: Arc<dyn Fft<f64>>,
    inv1: Arc<dyn Fft<f64>>,
    fwd2: Arc<dyn Fft<f64>>,
    inv2: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Clone for Spectral {
    fn clone(&self) -> Self {
        Self {
            grid: self.grid,
            fwd1: self.fwd1.clone(),
            inv1: self.inv1.clone(),
            fwd2: self.fwd2.clone(),
            inv2: self.inv2.clone(),
        }
    }
}

/// Signed frequency of FFT bin `k` out of `n`, and whether it is the Nyquist bin.
#[inline]
fn freq(k: usize, n: usize) -> (f64, bool) {
    if 2 * k == n {
        (k as f64, true)
    } else if 2 * k < n {
        (k as f64, false)
    } else {
        (k as f64 - n as f64, false)
    }
}

impl Spectral {
    pub fn new(grid: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            fwd1: planner.plan_fft_forward(grid.n1()),
            inv1: planner.plan_fft_inverse(grid.n1()),
            fwd2: planner.plan_fft_forward(grid.n2()),
            inv2: planner.plan_fft_inverse(grid.n2()),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn transform(&self, data: &mut [Complex64], forward: bool) {
        let (n1, n2) = (self.grid.n1(), self.grid.n2());
        let (f1, f2) = if forward { (&self.fwd1, &self.fwd2) } else { (&self.inv1, &self.inv2) };
        f1.process(data);
        let mut col = vec![Complex64::default(); n2];
        for i in 0..n1 {
            for j in 0..n2 {
                col[j] = data[i + n1 * j];
            }
            f2.process(&mut col);
            for j in 0..n2 {
                data[i + n1 * j] = col[j];
            }
        }
    }

    /// Unnormalized forward transform.
    pub fn forward(&self, f: &[f64]) -> Vec<Complex64> {
        let mut data: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut data, true);
        data
    }

    /// Inverse of [`Spectral::forward`], keeping the real part.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut spec, false);
        let scale = 1.0 / self.grid.len() as f64;
        spec.iter().map(|v| v.re * scale).collect()
    }

    pub fn forward_complex(&self, f: &[Complex64]) -> Vec<Complex64> {
        let mut data = f.to_vec();
        self.transform(&mut data, true);
        data
    }

    pub fn inverse_complex(&self, mut spec: Vec<Complex64>) -> Vec<Complex64> {
        self.transform(&mut spec, false);
        let scale = 1.0 / self.grid.len() as f64;
        spec.iter_mut().for_each(|v| *v *= scale);
        spec
    }

    /// Calls `f(bin, g, nyquist)` for every Fourier bin.
    fn for_each_mode<F: FnMut(usize, [f64; 2], bool)>(&self, mut f: F) {
        let (n1, n2) = (self.grid.n1(), self.grid.n2());
        let m = self.grid.lattice_inverse_transpose();
        let two_pi = 2.0 * std::f64::consts::PI;
        for j in 0..n2 {
            let (m2, ny2) = freq(j, n2);
            for i in 0..n1 {
                let (m1, ny1) = freq(i, n1);
                let g = [
                    two_pi * (m[0][0] * m1 + m[0][1] * m2),
                    two_pi * (m[1][0] * m1 + m[1][1] * m2),
                ];
                f(i + n1 * j, g, ny1 || ny2);
            }
        }
    }

    /// Applies the Fourier multiplier `symbol(g, nyquist)` to a real field.
    pub fn apply_symbol<S: Fn([f64; 2], bool) -> Complex64>(&self, f: &[f64], symbol: S) -> Vec<f64> {
        let mut spec = self.forward(f);
        self.for_each_mode(|k, g, ny| spec[k] *= symbol(g, ny));
        self.inverse(spec)
    }

    /// Squared wavevector length of every bin.
    pub fn wavenumbers_sq(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        self.for_each_mode(|k, g, _| out[k] = g[0] * g[0] + g[1] * g[1]);
        out
    }

    pub fn derivative(&self, f: &[f64], c: usize) -> Vec<f64> {
        self.apply_symbol(f, |g, ny| if ny { Complex64::default() } else { Complex64::new(0.0, g[c]) })
    }

    pub fn gradient(&self, f: &[f64]) -> VectorField {
        let x = self.derivative(f, 0);
        let y = self.derivative(f, 1);
        VectorField::from_components(self.grid, x, y).expect("grid sized")
    }

    /// `curl* h = (d2 h, -d1 h)`.
    pub fn curl_star(&self, h: &[f64]) -> VectorField {
        let x = self.derivative(h, 1);
        let y: Vec<f64> = self.derivative(h, 0).into_iter().map(|v| -v).collect();
        VectorField::from_components(self.grid, x, y).expect("grid sized")
    }

    /// `curl a = d1 a2 - d2 a1`.
    pub fn curl(&self, a: &VectorField) -> Vec<f64> {
        let d1 = self.derivative(&a.y, 0);
        let d2 = self.derivative(&a.x, 1);
        d1.iter().zip(&d2).map(|(p, q)| p - q).collect()
    }

    pub fn div(&self, a: &VectorField) -> Vec<f64> {
        let d1 = self.derivative(&a.x, 0);
        let d2 = self.derivative(&a.y, 1);
        d1.iter().zip(&d2).map(|(p, q)| p + q).collect()
    }

    pub fn laplacian(&self, f: &[f64]) -> Vec<f64> {
        self.apply_symbol(f, |g, _| Complex64::new(-(g[0] * g[0] + g[1] * g[1]), 0.0))
    }

    /// Mean-zero solution `u` of `Laplacian u = f - mean(f)`.
    pub fn inverse_laplacian(&self, f: &[f64]) -> Vec<f64> {
        self.apply_symbol(f, |g, _| {
            let k2 = g[0] * g[0] + g[1] * g[1];
            if k2 == 0.0 {
                Complex64::default()
            } else {
                Complex64::new(-1.0 / k2, 0.0)
            }
        })
    }

    /// Removes the mean and Nyquist modes, the null space of the stream-function problem.
    pub fn project(&self, h: &[f64]) -> Vec<f64> {
        self.apply_symbol(h, |g, ny| {
            if ny || (g[0] == 0.0 && g[1] == 0.0) {
                Complex64::default()
            } else {
                Complex64::new(1.0, 0.0)
            }
        })
    }

    /// Trigonometric interpolant evaluated on the shifted grid: `f(x + l)`.
    pub fn shift(&self, f: &[f64], l: [f64; 2]) -> Vec<f64> {
        self.apply_symbol(f, |g, ny| {
            let ph = g[0] * l[0] + g[1] * l[1];
            // Nyquist bins are real in the symmetric interpolant: keep only the cosine part.
            if ny {
                Complex64::new(ph.cos(), 0.0)
            } else {
                Complex64::from_polar(1.0, ph)
            }
        })
    }
}
