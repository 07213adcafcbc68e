//! Configuration, file formats and the `tdde` command line on top of
//! `tdde-core`.
//!
//! An experiment is one TOML file plus one output directory. Every command
//! reads the config, rebuilds or loads what it needs, and writes CSV/JSON
//! outputs, each with a `.meta.json` sidecar holding the resolved config and
//! a content hash.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use commands::{run, Command, Overrides};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};
