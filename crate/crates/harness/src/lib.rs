//! Synthetic data, experiment runners and benchmarking around `sparse_vpr`.

pub mod bench;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fixtures;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
