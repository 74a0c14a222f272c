use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("training diverged in {stage} at step {step}: {detail}")]
    TrainingDiverged { stage: String, step: usize, detail: String },

    #[error("checkpoint {path} was written for model fingerprint {found}, expected {expected}")]
    FingerprintMismatch { path: PathBuf, expected: String, found: String },

    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),

    #[error("missing artifact {}: {hint}", path.display())]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Self::InvalidArgument(msg.into())
    }

    pub(crate) fn diverged(stage: &str, step: usize, detail: impl Into<String>) -> Self {
        Self::TrainingDiverged { stage: stage.to_owned(), step, detail: detail.into() }
    }

    /// Process exit code: 2 for training divergence, 1 for every other failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::TrainingDiverged { .. } => 2,
            _ => 1,
        }
    }
}
