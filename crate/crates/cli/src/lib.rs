//! Command-line front end: configuration, run directories and artifact export.

pub mod args;
pub mod artifacts;
pub mod commands;

pub use args::Cli;
pub use commands::{resolve_config, run};
