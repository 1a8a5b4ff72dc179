//! Locally robust fair classification: a small dense-network engine,
//! adversarial fairness trainers with per-sample importance weights,
//! fairness metrics and an experiment harness.

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod ratio;
pub mod rng;
pub mod trainers;

pub use error::{Error, Result};
pub use rng::RngState;
