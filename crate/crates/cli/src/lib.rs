//! Command-line front end: synthetic data, preprocessing, training,
//! evaluation, label transfer and imputation.
//!
//! Every command writes its outputs atomically into one directory together
//! with a `manifest.json` listing each file and its SHA-256.

pub mod args;
pub mod bundle;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use args::Cli;
pub use commands::run;
pub use error::{CliError, CliResult};
