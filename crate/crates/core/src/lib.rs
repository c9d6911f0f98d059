//! Simulator and analysis toolkit for the transient probe response of a
//! three-level lambda system with electromagnetically induced transparency,
//! driven by a coupling field that switches on or off faster than the atomic
//! response.
//!
//! Three independent computation routes cover the same physics and are used
//! to cross-check each other: direct integration of the density-matrix
//! equations ([`ode`]), Laplace-domain rational transforms inverted by
//! residues ([`laplace`]), and closed-form transient expressions
//! ([`analytic`]). [`vector3`] holds the decay-free three-vector picture,
//! [`observe`] maps coherences to transmission and builds 2-D response
//! grids, and [`fit`] extracts parameters from measured traces.
//!
//! Unit convention: every frequency-like quantity crossing a public API
//! (Rabi frequencies, detunings, decay and dephasing rates) is cyclic, in
//! MHz. Time is in microseconds. Internal propagation uses angular units;
//! the conversion factor is [`TAU`].

pub mod analytic;
pub mod fit;
pub mod laplace;
pub mod model;
pub mod ode;
pub mod observe;
pub mod vector3;

/// 2*pi: multiply a cyclic frequency in MHz by this to get the angular rate
/// in rad/us.
pub const TAU: f64 = std::f64::consts::TAU;

pub use model::{DensityMatrix, FieldSchedule, LambdaParams, ModelError, SwitchMode};
pub use num_complex::Complex64;
