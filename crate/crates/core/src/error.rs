use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("cholesky factorization failed: matrix is not symmetric positive-definite (pivot {pivot})")]
    Factorization { pivot: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("trace does not match model: {0}")]
    Trace(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("triplet sampling failed: {0}")]
    Sampling(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("infeasible bounds for feature `{feature}`: {reason}")]
    InfeasibleBounds { feature: String, reason: String },

    #[error("cohort generation gave up after {attempts} rejected draws for label `{label}`")]
    GenerationTimeout { label: String, attempts: usize },

    #[error("record `{id}` is missing required feature `{feature}`")]
    IncompleteRecord { id: String, feature: String },

    #[error("nothing left after preprocessing: {0}")]
    EmptyResult(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<String>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit code for this error: 1 usage/configuration, 2 data, 3 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Divergence { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
