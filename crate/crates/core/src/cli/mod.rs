//! Batch experiment runner behind the `xbar-sim` binary.
//!
//! A run reads one TOML [`ExperimentConfig`], builds the dataset and network,
//! programs crossbars and writes tables into an output directory. Sweep
//! points and repetitions run in parallel; each draws from its own stream
//! derived from `(seed, sweep index, repetition)`, so outputs do not depend on
//! the thread count.

pub mod config;
pub mod output;
mod runner;

pub use config::{validate, Diagnostic, ExperimentConfig};
pub use output::{read_results, CrossbarState, Provenance, ResultRow, RunMeta, WeightsState};
pub use runner::{run, Command, RunOptions, RunSummary};
