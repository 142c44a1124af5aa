//! Library side of the `aepo-lab` command-line tool: configuration, ablation
//! variants, file formats and the subcommands themselves.

pub mod ablation;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use ablation::Variant;
pub use config::ExperimentConfig;
pub use error::CliError;
