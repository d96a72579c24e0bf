//! Thermal-light ghost imaging: speckle synthesis, two-arm propagation,
//! Monte Carlo correlation estimates and a deterministic correlation oracle.
//!
//! Lengths are in μm and spatial frequencies in rad/μm throughout.

// NaN must fail the positivity checks, so `!(x > 0.0)` is deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod harness;
pub mod lattice;
pub mod metrics;
pub mod optics;
pub mod oracle;
pub mod pgm;
pub mod source;

pub use error::{Error, Result};
