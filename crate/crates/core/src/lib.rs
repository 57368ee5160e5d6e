//! Student-oriented teacher training for knowledge distillation.
//!
//! The crate trains teachers with plain empirical risk minimization or with
//! Lipschitz and consistency regularization, distills students from them,
//! and measures calibration, fidelity, and distance to the true label
//! distribution on a synthetic mixed-feature data distribution whose ground
//! truth is known exactly.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod evalcal;
pub mod netlib;
pub mod regularize;
pub mod rng;
pub mod store;
pub mod trainlab;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
