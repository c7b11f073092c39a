//! Fairness audit pipeline over allocation records: config, CSV and JSON
//! artifacts, and the stage runners behind the `fairdea` command.

pub mod config;
pub mod csvio;
pub mod error;
pub mod pipeline;
pub mod report;

pub use config::PipelineConfig;
pub use error::{PipelineError, Stage, StageError};
pub use pipeline::run_pipeline;
