use std::path::PathBuf;

use chinpaint_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("unsupported image format in {path}: {reason}")]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("{path} is {width}x{height} but the configured grid is {nx}x{ny}")]
    DimensionMismatch {
        path: PathBuf,
        width: usize,
        height: usize,
        nx: usize,
        ny: usize,
    },
    #[error("mask {0} marks no pixel or every pixel; the damaged region must be a nonempty proper subset")]
    EmptyOrFullMask(PathBuf),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
    /// A verification command ran but its result is outside tolerance.
    #[error("check failed: {0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io { context: context.into(), source }
    }

    /// 2 for anything the user can fix in the inputs, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(
                CoreError::NonFinite { .. }
                | CoreError::PicardDiverged { .. }
                | CoreError::LineSearchFailed { .. }
                | CoreError::NotStationary { .. },
            )
            | CliError::CheckFailed(_) => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
