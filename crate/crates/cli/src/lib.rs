//! Experiment runner for the variance-reduced proximal gradient
//! library: config parsing, solver/verifier dispatch, CSV output.

pub mod config;
pub mod runner;
