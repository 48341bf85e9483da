use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: malformed file: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("malformed architecture spec {0:?}: expected widths like 512-2-1")]
    ArchSpec(String),
    #[error(transparent)]
    Core(#[from] hardlabel_core::Error),
    #[error("architecture mismatch: {expected:?} vs {found:?}")]
    ArchMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("no candidate survived the filters")]
    NoSurvivor,
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// Process exit status: 3 for too few tuples, 4 when nothing survives,
    /// 5 for output widths other than one, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(hardlabel_core::Error::InsufficientData { .. }) => 3,
            CliError::NoSurvivor => 4,
            CliError::Core(hardlabel_core::Error::UnsupportedOutput { .. }) => 5,
            _ => 1,
        }
    }
}
