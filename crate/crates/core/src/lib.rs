//! Distributed secondary frequency control with privacy-preserving power commands.
//!
//! The crate models a lossless, linearized power network driven by first-order
//! generators and static controllable loads, and closes the loop with one of
//! four secondary controllers:
//!
//! * an integral-action baseline,
//! * the bus-level primal-dual scheme,
//! * the per-unit extended primal-dual scheme, which only communicates
//!   power commands,
//! * the privacy-preserving scheme, which adds a time-varying gain and
//!   frequency-bounded noise to each unit's controller.
//!
//! Around the closed loop sit the economic-dispatch equilibrium (KKT) solver,
//! a numeric Lyapunov evaluator, a fixed-step simulator and an eavesdropper
//! harness that tries to reconstruct prosumption from intercepted commands.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod devices;
pub mod equilibrium;
mod error;
pub mod graph;
pub mod network;
pub mod runner;
pub mod scenario;
pub mod schemes;
pub mod sim;
pub mod trajectory_io;

pub use error::{Error, Result};

/// 0.01 Hz expressed in rad/s.
pub const FREQ_THRESHOLD_0_01_HZ: f64 = 2.0 * std::f64::consts::PI * 0.01;
