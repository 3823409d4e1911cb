//! Batch front end for the multispin toolkit: a JSON experiment config in,
//! CSV tables and JSON documents out.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod verify;

pub use commands::{run, CommandKind, CommandOutput, RunOptions};
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
