//! File formats, run configuration and the command-line driver for `rff-core`.
//!
//! The binary is a thin wrapper around [`cli::run`], so every subcommand can
//! also be driven in-process.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod report;

pub use error::{BenchError, LoadError, Result};
