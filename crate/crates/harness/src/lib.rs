//! Experiment harness for the policies of `bandit-core`: configuration
//! parsing, seeded runs and sweeps, CSV and SVG outputs, and diagnostics on
//! replayed runs.

pub mod config;
pub mod diag;
pub mod error;
pub mod output;
pub mod runner;

pub use config::{ConfigFile, PolicyKind, RunConfig};
pub use error::{HarnessError, Result};
pub use runner::{run_single, run_sweep, RunRecord, StepRow};
