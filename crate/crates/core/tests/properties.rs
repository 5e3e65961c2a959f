//! Property tests for the structural invariants.

use std::f64::consts::PI;

use gl_lattice::abrikosov::{self, BetaConfig};
use gl_lattice::field::{self, GridSpec};
use gl_lattice::gauge::{self, RawLatticeState};
use gl_lattice::lattice::{in_fundamental_domain, normalize_shape};
use gl_lattice::solver::{self, GlSystem};
use gl_lattice::spectral::Spectral;
use gl_lattice::state_file::StateFile;
use gl_lattice::theta::ThetaState;
use gl_lattice::{Error, GaugePerturbation, LatticeShape, QuasiPeriodicField};
use num_complex::Complex64;
use proptest::prelude::*;

fn upper_half_plane() -> impl Strategy<Value = Complex64> {
    (-3.0..3.0f64, 0.3..3.0f64).prop_map(|(x, y)| Complex64::new(x, y))
}

/// Theta state times a smooth periodic modulation, which keeps it quasi-periodic.
fn test_field(grid: GridSpec, amp: f64, mix: (f64, f64)) -> QuasiPeriodicField {
    let base = ThetaState::new(grid.shape(), 1).unwrap().sample(&grid).unwrap();
    let c = Complex64::new(mix.0, mix.1);
    let values = base
        .values()
        .iter()
        .enumerate()
        .map(|(p, a)| {
            let u = grid.point_to_frac(grid.point_at(p));
            amp * a * (1.0 + c * (2.0 * PI * u[0]).cos())
        })
        .collect();
    QuasiPeriodicField::from_values(grid, values).unwrap()
}

fn smooth_periodic(grid: &GridSpec, c: [f64; 3]) -> Vec<f64> {
    (0..grid.len())
        .map(|p| {
            let u = grid.point_to_frac(grid.point_at(p));
            c[0] * (2.0 * PI * u[0]).sin() + c[1] * (2.0 * PI * (u[0] + u[1])).cos() + c[2] * (4.0 * PI * u[1]).sin()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn normalization_is_idempotent_and_lands_in_domain(tau in upper_half_plane()) {
        let s = normalize_shape(tau).unwrap();
        prop_assert!(in_fundamental_domain(s.tau()));
        let again = normalize_shape(s.tau()).unwrap();
        prop_assert!((again.tau() - s.tau()).norm() < 1e-12);
    }

    #[test]
    fn solvability_norm_is_a_root(k2 in 0.6..4.0f64, beta in 0.1..0.3f64) {
        let n2 = solver::solvability_norm(k2.sqrt(), beta).unwrap();
        let rel = n2 / k2 - (k2 - 0.5) * beta * n2 * n2 - n2 * n2 / (4.0 * PI);
        prop_assert!(rel.abs() < 1e-12 * n2 / k2);
    }

    #[test]
    fn polyfit_recovers_polynomials(c in proptest::array::uniform3(-2.0..2.0f64)) {
        let x: Vec<f64> = (0..7).map(|k| 0.1 * k as f64).collect();
        let y: Vec<f64> = x.iter().map(|t| c[0] + c[1] * t + c[2] * t * t).collect();
        let (fit, res) = solver::polyfit(&x, &y, 2).unwrap();
        for k in 0..3 {
            prop_assert!((fit[k] - c[k]).abs() < 1e-10);
        }
        prop_assert!(res < 1e-10);
    }

    #[test]
    fn state_files_round_trip(values in proptest::collection::vec(-1e6..1e6f64, 3 * 64), kappa in 0.1..5.0f64) {
        let grid = GridSpec::new(LatticeShape::triangular(), 1, 8, 8).unwrap();
        let psi = QuasiPeriodicField::from_values(
            grid,
            values[..64].iter().zip(&values[64..128]).map(|(a, b)| Complex64::new(*a, *b)).collect(),
        ).unwrap();
        let h = GaugePerturbation::from_stream(grid, values[128..].to_vec()).unwrap();
        let f = StateFile::from_normal_form(&psi, &h, kappa, 1.0 + kappa * 1e-3).unwrap();
        let g = StateFile::from_bytes(&f.to_bytes()).unwrap();
        prop_assert_eq!(&g, &f);
        let psi2 = g.psi().unwrap();
        prop_assert_eq!(psi2.values(), psi.values());
    }

    #[test]
    fn poisson_solution_satisfies_equation(c in proptest::array::uniform3(-1.0..1.0f64)) {
        let grid = GridSpec::uniform(LatticeShape::square(), 1, 16).unwrap();
        let rhs = smooth_periodic(&grid, c);
        let u = gauge::solve_periodic_poisson(&grid, &rhs).unwrap();
        let lap = Spectral::new(grid).laplacian(&u);
        let err = lap.iter().zip(&rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10);
        let shifted: Vec<f64> = rhs.iter().map(|v| v + 0.5).collect();
        prop_assert!(matches!(gauge::solve_periodic_poisson(&grid, &shifted), Err(Error::NonzeroMean(_))));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn beta_is_modular_invariant(tau in (-0.5..0.5f64, 0.9..1.6f64).prop_map(|(x, y)| Complex64::new(x, y))) {
        let cfg = BetaConfig { grid_size: 24, truncation: None };
        let b = abrikosov::beta(tau, &cfg).unwrap().beta;
        let shifted = abrikosov::beta(tau + 1.0, &cfg).unwrap().beta;
        let inverted = abrikosov::beta(-1.0 / tau, &cfg).unwrap().beta;
        prop_assert!((b - shifted).abs() < 1e-9);
        prop_assert!((b - inverted).abs() < 1e-9);
    }

    #[test]
    fn residual_is_phase_equivariant(alpha in 0.0..2.0 * PI, amp in 0.1..0.8f64, re in -0.5..0.5f64, im in -0.5..0.5f64) {
        let grid = GridSpec::uniform(LatticeShape::triangular(), 1, 16).unwrap();
        let sys = GlSystem::new(grid, 1.2).unwrap();
        let psi = test_field(grid, amp, (re, im));
        let phase = Complex64::from_polar(1.0, alpha);
        let rotated = psi.scaled(phase);
        let f = sys.residual(1.05, psi.values()).unwrap();
        let fr = sys.residual(1.05, rotated.values()).unwrap();
        let scale = field::norm_sq(&grid, &f).sqrt().max(1e-12);
        let err = f.iter().zip(&fr).map(|(a, b)| (a * phase - b).norm()).fold(0.0, f64::max);
        prop_assert!(err < 1e-10 * scale.max(1.0));
        let (ha, _) = sys.solve_a(psi.values()).unwrap();
        let (hr, _) = sys.solve_a(rotated.values()).unwrap();
        let da = ha.stream().iter().zip(hr.stream()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(da < 1e-12);
        // Im <psi, F(psi)> vanishes: the reduced equation is real along the orbit direction.
        let ip = field::inner(&grid, psi.values(), &f);
        prop_assert!(ip.im.abs() < 1e-11 * (psi.norm_sq().sqrt() * scale).max(1e-12));
    }

    #[test]
    fn raw_energy_is_gauge_invariant(c in proptest::array::uniform3(-1.0..1.0f64), shift in proptest::array::uniform2(-1.0..1.0f64)) {
        let grid = GridSpec::uniform(LatticeShape::square(), 1, 48).unwrap();
        let psi = test_field(grid, 0.4, (0.2, -0.1));
        let h = GaugePerturbation::from_stream(grid, smooth_periodic(&grid, [0.1, -0.05, 0.02])).unwrap();
        let state = RawLatticeState::from_normal_form(&psi, &h).unwrap();
        let e = state.energy(1.1, 1.02);
        let moved = state.gauge_transformed(&smooth_periodic(&grid, c)).unwrap().with_constant_shift(shift);
        // A constant shift changes the state; gauge fixing removes it again.
        let back = gauge::fix_gauge(&moved).unwrap();
        let e_fixed = RawLatticeState::from_normal_form(&back.0, &back.1).unwrap().energy(1.1, 1.02);
        let e_gauge = state.gauge_transformed(&smooth_periodic(&grid, c)).unwrap().energy(1.1, 1.02);
        prop_assert!((e - e_gauge).abs() < 1e-10 * e.abs());
        prop_assert!((e - e_fixed).abs() < 1e-9 * e.abs());
    }

    #[test]
    fn gauge_fixing_preserves_density_and_field(l in proptest::array::uniform2(-3.0..3.0f64), c in proptest::array::uniform3(-1.0..1.0f64)) {
        let grid = GridSpec::uniform(LatticeShape::triangular(), 1, 32).unwrap();
        let psi = test_field(grid, 0.5, (0.1, 0.3));
        let h = GaugePerturbation::from_stream(grid, smooth_periodic(&grid, [0.05, 0.02, -0.03])).unwrap();
        let raw = RawLatticeState::from_normal_form(&psi, &h).unwrap()
            .translated(l)
            .gauge_transformed(&smooth_periodic(&grid, c)).unwrap();
        let (phi, h2, rep) = gauge::fix_gauge(&raw).unwrap();
        let dens = phi.values().iter().zip(psi.values()).map(|(a, b)| (a.norm() - b.norm()).abs()).fold(0.0, f64::max);
        prop_assert!(dens < 1e-9);
        let sp = Spectral::new(grid);
        let (b1, b2) = (sp.curl(&h2.potential()), sp.curl(&h.potential()));
        prop_assert!(b1.iter().zip(&b2).all(|(x, y)| (x - y).abs() < 1e-9));
        prop_assert!(rep.mean_a < 1e-12 && rep.div_a < 1e-10 && rep.phase_condition < 1e-8);
    }
}
