//! Experiment workflows behind the `dip` binary: data generation,
//! training, evaluation, diagnostics and the scaling benchmark.

pub mod alloc;
pub mod bench;
pub mod commands;
pub mod config;
pub mod data;
mod error;
pub mod eval;
pub mod run;
pub mod train;

pub use config::RunConfig;
pub use error::{CliError, Result};
