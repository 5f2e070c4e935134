//! Experiment harness: TOML configs, a content-addressed run registry, a CSV
//! results ledger, report rendering and the `sslab` command line.

pub mod cli;
pub mod config;
pub mod error;
pub mod ledger;
pub mod ops;
pub mod registry;
pub mod report;
mod svg;

pub use config::{ExperimentConfig, RunKind, RunSpec};
pub use error::{HarnessError, Result};
pub use registry::{run_id, Registry, RunRecord};
