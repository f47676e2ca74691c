//! Experiment harness for `zobilevel`: configuration files, training runs with
//! baselines and validation, result bundles on disk and SVG figures.
//!
//! The `zobilevel` binary wraps this library with the verbs `run`,
//! `validate`, `plot` and `selftest`.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod plot;
pub mod selftest;

pub use config::{ExperimentConfig, ExperimentKind};
pub use error::{HarnessError, Result};
pub use experiment::{execute, run_experiment, Outcome, ResultBundle};
pub use plot::emit_plots;
