use alloc::string::String;

/// Errors raised by the estimation library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    Dimension {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("intensity {value:.3e} on day {day} exceeds the divergence cap {cap:.3e}")]
    Divergence { day: i64, value: f64, cap: f64 },

    #[error("invalid state: {0}")]
    State(String),

    #[error("day {day}: {count} detections but zero expected detections")]
    SupportConflict { day: i64, count: f64 },

    #[error("consistency error: {0}")]
    Consistency(String),
}

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parameter { .. } | Error::Dimension { .. } => ErrorClass::Usage,
            Error::Data(_) | Error::SupportConflict { .. } | Error::Consistency(_) => ErrorClass::Data,
            Error::Numerical(_) | Error::Divergence { .. } | Error::State(_) => ErrorClass::Numerical,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn ensure_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::param(
            name,
            alloc::format!("must be finite and > 0, got {value}"),
        ))
    }
}
