//! Library side of the `pcsr` executable: experiment configuration and the
//! end-to-end runner that writes the result tables.

pub mod config;
pub mod experiment;
pub mod table;

use std::error::Error as StdError;
use std::io;

use thiserror::Error;

pub use config::{ExperimentConfig, SceneSource, Thresholds};
pub use experiment::{run_experiment, Check, ExperimentReport, CSV_FILES};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Version line printed by `pcsr --version`.
pub fn version_line() -> String {
    format!(
        "{ARTIFACT_VERSION} (model format v{}, corpus format v{}, frame format {})",
        pcsr_core::forest::MODEL_FORMAT_VERSION,
        pcsr_core::dataset::CORPUS_FORMAT_VERSION,
        pcsr_core::access::FRAME_VERSION,
    )
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<dyn StdError + Send + Sync>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Attaches a stage name to any error.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T, E: StdError + Send + Sync + 'static> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|e| CliError::Stage {
            stage,
            source: Box::new(e),
        })
    }
}
