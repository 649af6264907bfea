//! Experiment plumbing around `aloha-core`: spec files, grid evaluation,
//! CSV rows and slot traces. The `aloha` binary is a thin clap layer over
//! [`commands`].

pub mod commands;
pub mod error;
pub mod experiment;
pub mod rows;
pub mod spec;
pub mod trace;

pub use error::{exit_code, HarnessError, Result};
pub use experiment::{analyze_point, compare_spec, simulate_spec, GridPoint};
pub use rows::{Cell, CompareRow, ResultRow};
pub use spec::{ExperimentSpec, QRule};
