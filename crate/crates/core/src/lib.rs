//! Physical watermarking for replay-attack detection on sampled-data LTI plants.
//!
//! The pipeline runs continuous plant → zero-order-hold discretization
//! ([`plant`]) → steady-state Kalman/LQG synthesis ([`lqg`]) → watermark
//! covariance design under an LQG cost budget, optionally swept over the
//! sampling period ([`watermark`]) → Monte Carlo validation with a windowed
//! χ² detector ([`sim`]).

// `!(x > 0.0)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod lqg;
pub mod numerics;
pub mod plant;
pub mod sim;
pub mod watermark;

pub use error::{Error, Result};
