use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: malformed file: {msg}", path.display())]
    Format { path: PathBuf, msg: String },
    #[error(transparent)]
    Core(#[from] sparseocc_core::Error),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io { path: path.into(), source }
    }

    /// Process exit status: 1 verification, 2 usage or configuration, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Verification(_) => 1,
            BenchError::Config(_) | BenchError::Core(_) => 2,
            BenchError::Io { .. } | BenchError::Format { .. } => 3,
        }
    }
}
