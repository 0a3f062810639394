use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("step budget of {0} steps exceeded")]
    StepBudgetExceeded(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("observation sequence is empty")]
    EmptySequence,

    #[error("Lane-Emden right-hand side is singular at xi = {0}")]
    SingularOrigin(f64),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
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

pub type Result<T> = std::result::Result<T, Error>;
