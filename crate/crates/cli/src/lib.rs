//! Config-driven runner for few-photon FTS simulations.

pub mod commands;
pub mod config;

pub use commands::{resolve_output_dir, run, Command, Metadata, RunOptions, METADATA_FILE, OUT_DIR_ENV};
pub use config::{ConfigError, RunConfig};
