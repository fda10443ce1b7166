use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or image extent did not match what the operation requires.
    #[error("{op}: shape mismatch on {axis}: expected {expected}, found {found}")]
    Shape {
        op: &'static str,
        axis: String,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Image { path: PathBuf, msg: String },

    /// Malformed file content (bad magic, truncated payload, duplicate names, ...).
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("missing weight tensor for layer `{layer}`")]
    MissingWeight { layer: String },

    #[error("weight tensor `{name}` has shape {found:?}, expected {expected:?}")]
    WeightShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("frame has no valid depth pixels")]
    NoValidDepth,

    #[error("degenerate alignment: {0}")]
    Degenerate(String),

    #[error("singular values are repeated (gap {gap:.3e}); the alignment derivative is undefined")]
    RepeatedSingularValues { gap: f64 },

    #[error("{0} is empty")]
    Empty(&'static str),

    #[error("no pixels are covered by both the rendering and the target")]
    NoCoverage,
}

impl Error {
    pub(crate) fn shape(op: &'static str, axis: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::Shape {
            op,
            axis: axis.into(),
            expected,
            found,
        }
    }

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
}
