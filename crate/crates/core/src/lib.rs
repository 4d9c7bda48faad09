//! Decentralized primary frequency control for lossless power networks.
//!
//! The crate models a structure-preserving network (generators with swing,
//! governor and turbine dynamics; zero-inertia load buses), the local
//! frequency feedback laws built from inverse marginal costs, the network-wide
//! optimal frequency control (OFC) problem those laws solve at equilibrium,
//! and a composite Lyapunov certificate for local asymptotic stability.
//!
//! Module map:
//!
//! - [`network`]: buses, lines, lossless power flows, equilibrium angles.
//! - [`control`]: cost functions and the saturated feedback law.
//! - [`ofc`]: scalar dual reduction of the OFC problem, KKT audit, oracle.
//! - [`dynamics`]: closed-loop right-hand side, RK4 stepping, simulation.
//! - [`lyapunov`]: energy functions and the per-generator certificate.
//! - [`scenario`]: JSON scenarios, experiment runs, CSV/JSON output.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod error;
pub mod lyapunov;
pub mod network;
pub mod ofc;
pub mod scenario;

pub use error::{Error, Result};

/// Nominal grid frequency in Hz.
pub const NOMINAL_HZ: f64 = 60.0;

/// Nominal angular frequency, rad/s.
pub const NOMINAL_OMEGA: f64 = 120.0 * std::f64::consts::PI;

/// Converts a frequency deviation in rad/s to absolute frequency in Hz.
pub fn deviation_to_hz(omega: f64) -> f64 {
    NOMINAL_HZ + omega / (2.0 * std::f64::consts::PI)
}
