use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },
    #[error("truncated file: header implies {expected} payload bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
    #[error("mask provider: {0}")]
    Provider(String),
    #[error(transparent)]
    Core(#[from] econsg_core::Error),
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> IoError {
    let path = path.into();
    move |source| IoError::Io { path, source }
}
