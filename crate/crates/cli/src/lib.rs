//! Configuration, pipeline and report comparison behind the `blapn` binary.

pub mod compare;
pub mod config;
pub mod error;
pub mod run;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
