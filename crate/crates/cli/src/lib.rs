//! Command line front end: configuration, stage orchestration, run
//! manifests and plots.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod plot;
pub mod stages;

pub use commands::{run, Cli, Command};
pub use config::RunConfig;
pub use error::{CliError, CliResult, ExitKind};
