//! Batch front-end: `estimate`, `evaluate`, `sweep`, `bound` and `report`
//! driven by a single JSON config.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{execute, Command};
pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
