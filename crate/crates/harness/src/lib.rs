//! Experiment harness: configuration files, seeded runs, metrics CSVs,
//! bandwidth sweeps and plots.

pub mod config;
pub mod error;
pub mod metrics;
pub mod plot;
pub mod run;
pub mod sweep;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use run::{run, run_seed, RunOptions, RunOutcome, SeedOutcome};
