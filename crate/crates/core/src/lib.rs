//! Dynamic importance weighting (DIW) under distribution shift.
//!
//! The library interleaves two steps per mini-batch: weight estimation (WE),
//! which solves a kernel-mean-matching quadratic program over model-derived
//! features, and weighted classification (WC), which trains a dense network
//! on the weighted empirical risk. Generators for covariate shift, label
//! noise, and class-prior shift ship with closed-form weight oracles so the
//! recovered weights can be audited.

pub mod error;
pub mod kernels;
pub mod kmm;
pub mod linalg;
pub mod net;
pub mod seeds;
pub mod shifts;
pub mod trainer;
pub mod transforms;

pub use error::{Error, Result};
