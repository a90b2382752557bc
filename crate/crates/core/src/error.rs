use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator, grouped so the CLI can map them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// A value violated a documented precondition (parameter ranges, grid size, ...).
    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    /// Configuration document could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    /// A field left its admissible range during time stepping.
    #[error("invariant violated at t = {t}: {field}[{cell}] = {value:e} ({rule})")]
    Invariant {
        field: &'static str,
        cell: usize,
        value: f64,
        t: f64,
        rule: &'static str,
    },

    #[error("near-singular pivot {pivot:e} at row {row}")]
    SingularPivot { row: usize, pivot: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("integrator step underflow: {0}")]
    StepUnderflow(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 validation, 2 runtime invariant, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invalid { .. } | Error::Config(_) | Error::InsufficientData(_) => 1,
            Error::Invariant { .. } | Error::SingularPivot { .. } | Error::StepUnderflow(_) => 2,
            Error::Io { .. } => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
