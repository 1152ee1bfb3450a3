//! Command-line front end: CSV ingestion, run configuration and the
//! `estimate`, `iv`, `simulate` and `check-expansion` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod ingest;

pub use config::{Overrides, Roles, RunConfig};
pub use error::{CliError, CliResult};
pub use ingest::{ingest_csv, write_csv};
