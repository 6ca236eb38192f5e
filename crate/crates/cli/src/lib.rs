//! Command-line front end for the plastibite engine: INI-style run
//! configuration, subcommands for spectral analysis, time-domain simulation,
//! steady-state construction and parameter sweeps, plus SVG figure emission.
//!
//! All outputs are deterministic: identical configs produce byte-identical
//! CSV and JSON files, with no wall-clock or RNG anywhere in the pipeline.

pub mod commands;
pub mod config;
pub mod error;
pub mod render;

pub use error::{CliError, Result};
