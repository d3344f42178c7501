use std::fmt;

use thiserror::Error;

/// Coarse classification used by frontends to choose exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{what} {value} outside valid range [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("time series ranges do not overlap")]
    NoOverlap,

    #[error("insufficient overlap: {pairs} concurrent pairs, need at least {needed}")]
    InsufficientOverlap { pairs: usize, needed: usize },

    #[error("calibration failed: measured age {measured} is incompatible with the curve")]
    CalibrationFailure { measured: f64 },

    #[error("degenerate chronology: {0}")]
    DegenerateChronology(String),

    #[error("persistence undefined: kernel weights vanish at lag {lag}")]
    UndefinedPersistence { lag: f64 },

    #[error("sample output is empty: {0}")]
    EmptyOutput(String),

    #[error("scaled bias undefined for zero coupling")]
    UndefinedScaling,

    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Domain(_) => ErrorKind::Config,
            Error::Parse { .. } | Error::Invalid(_) | Error::OutOfRange { .. } => ErrorKind::Data,
            Error::NoOverlap | Error::InsufficientOverlap { .. } | Error::EmptyOutput(_) => {
                ErrorKind::Data
            }
            Error::ZeroVariance
            | Error::CalibrationFailure { .. }
            | Error::DegenerateChronology(_)
            | Error::UndefinedPersistence { .. }
            | Error::UndefinedScaling => ErrorKind::Numerical,
        }
    }

    /// Short machine-readable label.
    pub fn reason(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Parse { .. } => "parse",
            Error::OutOfRange { .. } => "out_of_range",
            Error::ZeroVariance => "zero_variance",
            Error::NoOverlap => "no_overlap",
            Error::InsufficientOverlap { .. } => "insufficient_overlap",
            Error::CalibrationFailure { .. } => "calibration_failure",
            Error::DegenerateChronology(_) => "degenerate_chronology",
            Error::UndefinedPersistence { .. } => "undefined_persistence",
            Error::EmptyOutput(_) => "empty_output",
            Error::UndefinedScaling => "undefined_scaling",
            Error::Invalid(_) => "invalid",
        }
    }

    pub(crate) fn domain(msg: impl fmt::Display) -> Self {
        Error::Domain(msg.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
