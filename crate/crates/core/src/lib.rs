//! Numerical Abrikosov vortex lattices for the Ginzburg-Landau equations near the
//! bifurcation from the normal state.
//!
//! The crate works on one lattice cell in rescaled units (cell area `2 pi`, background
//! field `n`), with quasi-periodic order parameters and periodic gauge perturbations.

pub mod abrikosov;
pub mod error;
pub mod field;
pub mod gauge;
pub mod lattice;
pub mod linalg;
pub mod operators;
pub mod solver;
pub mod spectral;
pub mod state_file;
pub mod stencil;
pub mod theta;

pub use error::{Error, Result};
pub use field::{GaugePerturbation, GridSpec, QuasiPeriodicField, VectorField};
pub use lattice::{normalize_shape, FluxParameters, LatticeShape};
