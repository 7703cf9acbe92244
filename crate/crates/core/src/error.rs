use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes that an operation cannot combine.
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input data does not fit the model or format.
    #[error("data error: {0}")]
    Data(String),

    /// A feature vector with (near) zero norm reached a cosine.
    #[error("degenerate feature: norm {norm:e} is below {floor:e}")]
    DegenerateFeature { norm: f64, floor: f64 },

    #[error("metric error: {0}")]
    Metric(String),

    #[error("latent optimization diverged at iteration {iteration}: non-finite gradient")]
    Optimization { iteration: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checkpoint {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("checkpoint {path}: unsupported format version {found} (expected {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
