use std::path::PathBuf;

/// Errors of the file and command layer. Core errors pass through unchanged
/// so the exit code can tell validation problems from numerical failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] dlmm_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: file is empty")]
    EmptyFile { path: PathBuf },
    #[error("{path}: missing column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}, row {row}: cannot parse `{value}` in column `{column}`")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}, row {row}: duplicate (eu, obs, time, rep) key")]
    DuplicateKey { path: PathBuf, row: usize },
    #[error("{path}, row {row}: observational unit observed twice (eu {eu}, obs {obs})")]
    ObservedTwice {
        path: PathBuf,
        row: usize,
        eu: String,
        obs: String,
    },
    #[error("{path}, row {row}: {message}")]
    Malformed { path: PathBuf, row: usize, message: String },
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// 2 for numerical failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(e) if e.is_numerical() => 2,
            _ => 1,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
