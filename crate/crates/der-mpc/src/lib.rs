//! Optimal allocation of aggregated distributed energy resources (DERs)
//! against a net-demand forecast.
//!
//! Each DER aggregation (air conditioners, water heaters, building HVAC,
//! refrigerators, EV fleets) is modeled as a virtual battery with leakage
//! and power/energy box limits. A receding-horizon controller solves one
//! convex quadratic program per iteration to split the forecast between
//! bulk generation and the DER fleet, and a simulation harness runs the
//! closed loop and reports how much ramping and regulation burden the DERs
//! remove from bulk generation.
//!
//! Module map:
//! - [`battery`]: virtual-battery dynamics, constraint checks, and the
//!   derivation of aggregate limits from thermostatic-load parameters;
//! - [`qp`]: sparse convex QP solver with verifiable KKT residuals;
//! - [`mpc`]: horizon QP assembly and the receding-horizon loop;
//! - [`data_io`]: time-series ingestion, resampling, rolling forecast
//!   windows with disturbance injection;
//! - [`sim`]: closed-loop experiment harness, metrics, synthetic scenarios;
//! - [`config`]: flat key-value run configuration for the CLI.

pub mod battery;
pub mod config;
pub mod data_io;
pub mod mpc;
pub mod qp;
pub mod sim;
