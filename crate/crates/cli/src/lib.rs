//! Command-line front end: configuration, CSV ingestion, output writers and
//! the subcommands behind the `beran` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod svg;

pub use error::{CliError, Result};
