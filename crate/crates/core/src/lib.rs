//! Distributed state estimation with Kalman-consensus filtering, a windowed
//! χ² detector at every node, and an attacker that learns a linear
//! false-data-injection policy online under a detection budget.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: the linear-Gaussian plant, per-node sensors and the graph.
//! - [`kcf`]: gain synthesis, the per-node filter and innovation calibration.
//! - [`detection`]: the χ² detector and detection-rate estimation.
//! - [`olaad`]: attack primitives, the attacker's central filter, the
//!   closed-form surrogate costs, SPSA and the multiplier update.
//! - [`harness`]: configuration, paired experiment runs, metrics and output.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with the bad range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod detection;
pub mod error;
pub mod harness;
pub mod kcf;
pub mod linalg;
pub mod model;
pub mod olaad;
pub mod rng;

pub use error::{Error, Result, StageExt};
