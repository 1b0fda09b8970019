//! Experiment harness: configuration, pipeline stages and report tables.

pub mod commands;
pub mod config;
mod error;
pub mod stats;

pub use error::{CliError, Result};
