//! Experiment runner for `rml-core`: configuration, snapshot files, manifests
//! and the subcommand pipelines behind the `rml` binary.

#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod manifest;
pub mod run;
pub mod snapshot;

pub use config::{parse_config, ConfigError, ExperimentConfig};
pub use run::{exit_code, run, Command};
