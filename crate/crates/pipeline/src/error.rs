use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] mscgm_core::Error),
    #[error("{}: {message}", path.display())]
    File { path: PathBuf, message: String },
    /// Several per-file failures gathered from one manifest.
    #[error("{} file(s) failed:\n{}", .0.len(), .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Files(Vec<PipelineError>),
    #[error("checkpoint format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("invalid config: {0}")]
    Config(String),
}

impl PipelineError {
    pub fn file(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Self {
        PipelineError::File {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
