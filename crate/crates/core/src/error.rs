use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("degenerate scale: {0}")]
    DegenerateScale(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {msg}")]
    Training { epoch: usize, batch: usize, msg: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Short machine-readable category, used by the CLI error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Domain(_) => "domain",
            Error::LengthMismatch(_) => "length_mismatch",
            Error::DegenerateScale(_) => "degenerate_scale",
            Error::Config(_) => "config",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::NonFiniteGradient(_) => "non_finite_gradient",
            Error::Training { .. } => "training",
            Error::Json(_) => "config",
        }
    }

    /// Process exit code for the CLI; distinct per failure category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::Format { .. } => 4,
            Error::Config(_) | Error::Json(_) => 5,
            Error::Training { .. } | Error::NonFiniteGradient(_) => 6,
            Error::Shape { .. } => 7,
            Error::Domain(_) | Error::LengthMismatch(_) | Error::DegenerateScale(_) => 8,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
