//! Experiment runner for the `rsma-core` solver: parameter sweeps, scheme
//! and decoding-order comparisons, and Monte-Carlo validation of the
//! deterministic equivalent, all driven by a JSON config.

use std::path::PathBuf;

pub mod config;
pub mod output;
pub mod runner;

pub use config::{ExperimentConfig, OrderingChoice, Scheme, Sweep, SweepAxis};
pub use runner::{compare_orders, compare_schemes, optimize, run_sweep, validate_de};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] rsma_core::Error),
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
