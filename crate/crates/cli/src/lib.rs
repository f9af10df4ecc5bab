//! Experiment harness for unavoidable-set constructions: versioned
//! configurations, staged pipelines with persisted artifacts, and replay.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod output;
pub mod pipeline;
pub mod record;
pub mod replay;

pub use config::{ExperimentConfig, Overrides, Pipeline};
pub use error::{CliError, Result};
pub use pipeline::run_pipeline;
pub use record::RunRecord;
pub use replay::{replay, ReplayReport};
