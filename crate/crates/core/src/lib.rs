//! Fault-tolerant quadrotor flight on three rotors with onboard state estimation.
//!
//! The crate bundles a rigid-body simulator with rotor-failure injection, a
//! reduced-attitude dynamic-inversion controller, synthetic onboard sensors
//! (IMU, range finder, downward camera and event stream), a rotation
//! corrected complementary filter, and a range-aided sliding-window
//! visual-inertial estimator. [`harness`] wires everything into a
//! deterministic closed loop driven by declarative scenario files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attitude;
pub mod dynamics;
pub mod error;
pub mod ftc;
pub mod harness;
pub mod math;
pub mod par;
pub mod rng;
pub mod sensorsim;
pub mod vio;

pub use error::{Error, Result};
