//! Simulation and verification toolkit for energy-driven stochastic
//! state-vector reduction.
//!
//! The collapse dynamics is available in three equivalent forms:
//!
//! - a norm-preserving stochastic Schrödinger equation for `|z⟩`
//!   ([`sde::step_state`]),
//! - a pure-state density-matrix SDE, both in Euler–Maruyama and in manifestly
//!   unitary form ([`sde::step_density`], [`sde::step_density_unitary`]),
//! - an SDE in projective coordinates driven by the Fubini–Study gradient of
//!   the energy ([`sde::step_projective`]).
//!
//! On top of the integrators sit a reproducible parallel ensemble driver
//! ([`ensemble`]), the deterministic ensemble-mean (Lindblad) evolution
//! ([`lindblad`]), tensor-product systems ([`composite`]), projective-geometry
//! identity certification ([`geometry`]) and back-of-envelope reduction-time
//! calculators ([`estimates`]).
//!
//! Units: everything except [`estimates`] is dimensionless with ħ = 1.

pub mod composite;
pub mod ensemble;
pub mod error;
pub mod estimates;
pub mod geometry;
pub mod lindblad;
pub mod linalg;
pub mod sde;

pub use error::{Error, Result};
pub use linalg::{CMatrix, DensityMatrix, HermitianOperator, Spectrum, StateVector, C64};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
