//! Experiment harness: reproducible runs of ADC characterization,
//! calibration, crossbar oracle checks and ADC-aware training recipes.
//!
//! Every command is a pure function of its resolved configuration; each
//! output directory receives `config.resolved.toml` and `version.txt`.

pub mod calibrate;
pub mod characterize;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod fetch;
pub mod lab;
pub mod mvm_check;
pub mod output;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use output::RunDir;
