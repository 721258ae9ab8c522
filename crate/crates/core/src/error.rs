use std::path::PathBuf;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: usize, detail: String },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("insufficient segments: {0}")]
    InsufficientSegments(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("recovery policy already terminated")]
    RecoveryTerminated,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid failure spec: {0}")]
    InvalidFailureSpec(String),

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("missing input: {0}")]
    MissingInput(PathBuf),

    #[error("single-class input: ROC needs both positive and negative labels")]
    SingleClass,

    #[error("model weights are not variational")]
    NotVariational,

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            detail: detail.into(),
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
