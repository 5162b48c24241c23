//! Command-line front end for Sinkhorn MPC experiments.
//!
//! `smpc simulate` reads an [`config::ExperimentConfig`], runs the requested
//! controllers and writes `trajectory.csv`, `summary.json` and
//! `trajectory.svg` per run. `sinkhorn`, `assign` and `gramian` expose the
//! individual building blocks.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod output;

pub use commands::{run, EXIT_CONFIG, EXIT_NUMERIC};
