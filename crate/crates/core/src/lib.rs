//! Blind symbol detection from one-bit quantized linear measurements.
//!
//! The detector unfolds preconditioned gradient descent on the relaxed
//! one-bit maximum-likelihood objective into a fixed-depth network whose
//! system parameters and per-layer preconditioners are learned from
//! labeled pairs. The crate also ships model-based baselines (iterative
//! near-ML with perfect CSI, plain relaxed MLE, exhaustive MLE) and a
//! Monte-Carlo BER evaluation harness.

pub mod baselines;
pub mod channel;
pub mod error;
pub mod harness;
pub mod likelihood;
pub mod training;
pub mod unfolded;

pub use error::{Error, Result};
pub use likelihood::{Constellation, OneBitObservation, SystemParams};
