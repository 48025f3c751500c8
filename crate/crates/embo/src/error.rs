use std::path::{Path, PathBuf};

/// Failure of a command, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("stage {stage}: {source}")]
    Numerical {
        stage: &'static str,
        #[source]
        source: embo_core::Error,
    },
    #[error("verification failed: {0}")]
    Verification(String),
}

impl RunError {
    pub fn config(path: impl Into<String>, reason: impl std::fmt::Display) -> Self {
        RunError::Config(format!("{}: {reason}", path.into()))
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        RunError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        RunError::Format {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    pub fn stage(stage: &'static str) -> impl FnOnce(embo_core::Error) -> RunError {
        move |source| RunError::Numerical { stage, source }
    }

    /// 2 for bad input (config, files), 3 for numerical failure, 4 for
    /// failed verification thresholds.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io { .. } | RunError::Format { .. } => 2,
            RunError::Numerical { .. } => 3,
            RunError::Verification(_) => 4,
        }
    }
}
