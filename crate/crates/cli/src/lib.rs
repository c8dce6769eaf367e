//! Command-line driver for the CoMIR pipeline.
//!
//! A run reads one TOML configuration ([`config::RunConfig`]), writes every
//! artifact into a fresh run directory and records a manifest of the
//! resolved configuration, seeds and file digests next to them.

pub mod commands;
pub mod config;
mod error;
pub mod manifest;

pub use config::{validate_config, validate_config_with, RunConfig, SEED_ENV};
pub use error::{CliError, Result};
