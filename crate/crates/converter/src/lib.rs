//! File formats, batch execution and the command implementations of the `converter` tool.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod metrics;

pub use error::{CliError, CliResult};
