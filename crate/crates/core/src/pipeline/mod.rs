//! Reproducible command-line pipeline: configuration, provenance, the
//! subcommands and PGM export.

pub mod cli;
pub mod commands;
pub mod config;
pub mod pgm;

pub use cli::Cli;
pub use commands::run;
pub use config::PipelineConfig;
