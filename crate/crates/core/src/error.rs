use thiserror::Error;

/// Errors raised by the simulator and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside its allowed domain.
    #[error("invalid `{field}`: {reason}")]
    Domain { field: &'static str, reason: String },

    /// An operation was applied to a value that does not satisfy its precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Input data is too short for the requested analysis.
    #[error("input too short: need at least {min} samples, got {got}")]
    TooShort { min: usize, got: usize },

    /// An iterative fit failed to converge or was rejected.
    #[error("fit failed: {0}")]
    FitFailed(String),

    /// Detector bins without any counts where a normalization was required.
    #[error("{count} bin(s) have zero total counts (first at index {first})")]
    InvalidBins { count: usize, first: usize },

    #[error("I/O error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn domain(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            field,
            reason: reason.into(),
        }
    }

    /// True for errors that stem from a numerical procedure rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::FitFailed(_) | Error::InvalidBins { .. })
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
