use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit codes: configuration problems (2),
/// stage failures during training (3), and I/O or format problems (4).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("stage {stage} failed: {reason}")]
    Stage { stage: String, reason: String },

    #[error("non-finite loss in {stage} at epoch {epoch}")]
    NonFiniteLoss { stage: String, epoch: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn stage(stage: impl Into<String>, reason: impl std::fmt::Display) -> Self {
        Error::Stage {
            stage: stage.into(),
            reason: reason.to_string(),
        }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit code for the CLI: 2 config, 3 stage, 4 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) | Error::Data(_) => 2,
            Error::Stage { .. } | Error::NonFiniteLoss { .. } => 3,
            Error::Io(_) | Error::Json(_) | Error::Format(_) => 4,
        }
    }
}
