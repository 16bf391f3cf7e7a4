//! Experiment runner behind the `unlearn` binary: configuration, the
//! train/unlearn/compose/sweep pipelines and report aggregation.

pub mod aggregate;
pub mod config;
pub mod error;
pub mod experiment;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
pub use experiment::Experiment;
