//! Experiment runner for the `bgs-core` solvers: randomized starts,
//! stopping rules, replication, aggregation and report files.

pub mod config;
mod error;
pub mod experiment;
pub mod report;

pub use error::{HarnessError, Result};
pub use experiment::{
    perturb_start, run_experiment, Aggregate, ExperimentOutcome, ExperimentSpec, RunReport, Solver,
};
pub use report::Format;
