//! Experiment harness: configs, runner, flat-file output and the CLI.

pub mod cli;
pub mod config;
pub mod output;
pub mod runner;

pub use config::{Cell, ExperimentConfig, ExperimentKind, Method, Reference};
pub use output::{Manifest, Table, Value};
pub use runner::{run_experiment, run_to_disk, ExperimentOutput};
