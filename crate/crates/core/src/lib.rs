//! Deep-EDMD Koopman linearization of orbital dynamics.
//!
//! The pipeline generates two-body and CR3BP trajectory datasets, trains a
//! small SELU network whose outputs (concatenated with the raw state) span a
//! lifted space in which a finite Koopman matrix `K` advances the dynamics,
//! and evaluates corrected linear rollouts against the nonlinear reference.

pub mod cli;
pub mod datagen;
pub mod dynamics;
pub mod error;
pub mod koopman;
pub mod linalg;
pub mod metrics;
pub mod neuralnet;

pub use error::{Error, Result};
