//! Experiment harness for the DB-GFN training engine.
//!
//! The algorithms live in [`dbgfn_core`]; this crate adds what needs `std`:
//! TOML experiment configs, reward tables from CSV, JSON checkpoints, the
//! metrics CSV / summary JSON writers and the `dbgfn` command-line tool.

pub mod checkpoint;
pub mod config;
mod error;
pub mod harness;
pub mod table;

pub use config::{Experiment, ExperimentConfig};
pub use error::{Error, Result};
pub use harness::{run_experiment, sweep, RunOutput, RunSummary, SweepSummary};

pub use dbgfn_core as core;
