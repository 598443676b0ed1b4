use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("predictor output {value} outside [0, {upper}] at atom {atom}")]
    Domain { atom: usize, value: f64, upper: f64 },

    #[error("distributions do not share a support: {0}")]
    Support(String),

    #[error("norm ratio undefined: predictors agree on every weighted atom")]
    DegenerateRatio,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("risk became non-finite after {step} inner steps (learning rate too large?)")]
    Divergence { step: usize },

    #[error("counterexample construction violated: atanh argument {0} outside (-1, 1)")]
    Construction(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error at row {row}, column `{column}`: {message}")]
    Data {
        row: usize,
        column: String,
        message: String,
    },

    #[error("data error: {0}")]
    Dataset(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Configuration and data problems, as opposed to numerical failures.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Data { .. }
                | Error::Dataset(_)
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::Json(_)
        )
    }
}
