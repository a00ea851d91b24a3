//! Command-line front end: argument parsing, commands and rule tables.

pub mod args;
pub mod commands;
pub mod error;
pub mod table;

pub use error::{CliError, ExitCode};
