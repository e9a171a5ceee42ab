use gclab_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input data that failed to parse or validate. `location` is a line
    /// number or a JSON path inside `file`.
    #[error("{file}: {location}: {msg}")]
    Data {
        file: String,
        location: String,
        msg: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("incompatible modules: {first} with {second}: {reason}")]
    Incompatible {
        first: String,
        second: String,
        reason: String,
    },

    #[error("sampler: {0}")]
    Sampler(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} ({modules})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        modules: String,
    },

    #[error("evaluation: {0}")]
    Eval(String),

    #[error("harness: {0}")]
    Harness(String),

    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn data(file: impl Into<String>, location: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Data {
            file: file.into(),
            location: location.into(),
            msg: msg.into(),
        }
    }

    /// Whether the error comes from bad input data rather than a failure
    /// while running.
    pub fn is_data_error(&self) -> bool {
        matches!(self, Error::Data { .. } | Error::Json(_) | Error::Csv(_) | Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
