//! Experiment orchestration for the `smcam` command-line tool.

pub mod config;
pub mod design;
pub mod pipeline;

pub use config::{ExperimentConfig, RawConfig};
pub use pipeline::{execute, run_experiment, Outcome};
