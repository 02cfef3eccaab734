//! Simulation-based inference for two-stage extremum estimators.

pub mod error;
pub mod first_stage;
pub mod inference;
pub mod linalg;
pub mod network;
pub mod optim;
pub mod dgp;
pub mod rng;
pub mod second_stage;

pub use error::{Error, Result};
