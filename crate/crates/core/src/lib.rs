//! Mean-field model of power-of-d load balancing with MAP arrivals and
//! phase-type service: environment factors, the ODE system, its
//! matrix-analytic fixed point, closed-form performance measures and an
//! N-server discrete-event simulator.

pub mod catalog;
pub mod envfactor;
mod error;
pub mod fixedpoint;
pub mod linalg;
pub mod meanfield;
pub mod par;
pub mod perf;
pub mod simulator;
pub mod stochkit;
pub mod validate;

pub use error::{Error, Result};
pub use stochkit::{MapDescriptor, ModelSpec, PhDistribution};

/// Crate version recorded in output provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
