//! Experiment harness: configuration, run records, and the orchestration
//! behind the `uha` command-line tool.

pub mod config;
pub mod experiments;
pub mod record;
