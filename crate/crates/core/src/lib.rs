//! Near-field blockage-aware beamforming with Airy-shaped wavefronts.

// `!(x > 0.0)` is used on purpose so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod hybrid;
pub mod propagation;
pub mod scene;
pub mod special;
pub mod training;
pub mod wavefront;

pub use error::{Error, Result};
