//! Library half of the `nli-lab` binary: run configuration, commands and
//! error codes, kept out of `main` so they can be tested directly.

pub mod commands;
pub mod config;
pub mod error;

pub use config::{Profile, RunConfig};
pub use error::CliError;
