//! Command-line front end: run configuration, report rendering and the
//! `audit`, `compare`, `match`, `synth` and `validate` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

pub use error::CliError;
