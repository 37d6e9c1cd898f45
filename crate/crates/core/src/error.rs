use std::fmt;

use thiserror::Error;

/// Why a single time step could not be completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    /// A shell with index `j >= 1` went negative under the reject-step policy.
    Positivity,
    /// A component overflowed or became NaN.
    NonFinite,
    /// The implicit solve did not converge even after repeated step halving.
    SolverDivergence,
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultKind::Positivity => write!(f, "positivity violated"),
            FaultKind::NonFinite => write!(f, "non-finite value"),
            FaultKind::SolverDivergence => write!(f, "implicit solver diverged"),
        }
    }
}

/// A step failure localized to one shell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepFault {
    pub kind: FaultKind,
    pub mode: usize,
}

#[derive(Debug, Error)]
pub enum DyadicError {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("integration failed at t = {time}: {kind} in mode {mode}")]
    Integration {
        time: f64,
        mode: usize,
        kind: FaultKind,
    },

    #[error("step size {dt} exceeds the stability gate {gate}")]
    StabilityGate { dt: f64, gate: f64 },

    #[error("grid mismatch: {0}")]
    Grid(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl DyadicError {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        DyadicError::Contract(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, DyadicError>;
