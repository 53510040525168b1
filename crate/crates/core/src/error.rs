use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two operands whose dimensions do not compose.
    #[error("shape mismatch at {location}: {detail}")]
    Shape { location: String, detail: String },

    /// A NaN or infinity where a finite value is required.
    #[error("non-finite value: {0}")]
    Numeric(String),

    /// Invalid or out-of-range configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Invalid caller-supplied data.
    #[error("invalid input: {0}")]
    Input(String),

    /// The scenario generator exhausted its retry budget.
    #[error("scenario {kind} (seed {seed}) infeasible after {attempts} attempts")]
    Infeasible {
        kind: String,
        seed: u64,
        attempts: usize,
    },

    /// Argument outside the support of a distribution.
    #[error("domain error: {0}")]
    Domain(String),

    /// Tail model could not be fitted.
    #[error("fit error: {0}")]
    Fit(String),

    /// Loss became NaN or infinite during optimisation.
    #[error("training diverged: {0}")]
    Training(String),

    /// An artifact references an upstream artifact other than the one supplied.
    #[error("integrity error: {artifact} expects {expected}, found {found}")]
    Integrity {
        artifact: String,
        expected: String,
        found: String,
    },

    /// Artifact document has an unsupported format version.
    #[error("unsupported {kind} format version {found} (expected {expected})")]
    Version {
        kind: String,
        found: u32,
        expected: u32,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(location: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            location: location.into(),
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
