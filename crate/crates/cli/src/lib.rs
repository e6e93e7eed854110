//! Staged, resumable pipeline over a run directory.

pub mod config;
pub mod manifest;
pub mod pipeline;

pub use config::Config;
pub use manifest::{RunManifest, Stage, StageState};
pub use pipeline::{Pipeline, PipelineError, StageRun};
