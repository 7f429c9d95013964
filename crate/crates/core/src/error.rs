use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Closed interval of `tau1` values for which the optimal class bounds admit
/// a weight vector on the simplex. `None` bounds mean the interval is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauInterval {
    pub lo: f64,
    pub hi: f64,
}

impl TauInterval {
    pub fn is_empty(&self) -> bool {
        !(self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.lo <= self.hi)
    }

    pub fn contains(&self, tau1: f64) -> bool {
        !self.is_empty() && tau1 >= self.lo && tau1 <= self.hi
    }
}

impl fmt::Display for TauInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            write!(f, "(empty)")
        } else {
            write!(f, "[{:.6e}, {:.6e}]", self.lo, self.hi)
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The weight box admits no point with unit mass.
    #[error("infeasible configuration: {message}{}", .feasible_tau.map(|t| format!("; feasible tau1 range {t}")).unwrap_or_default())]
    Infeasible {
        message: String,
        feasible_tau: Option<TauInterval>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible {
            message: msg.into(),
            feasible_tau: None,
        }
    }

    /// Machine-readable category, printed by the CLI on failure.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "argument",
            Error::ShapeMismatch(_) => "shape",
            Error::Infeasible { .. } => "infeasible",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Json(_) => "config",
        }
    }

    /// Process exit code associated with [`Error::category`].
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) => 2,
            Error::ShapeMismatch(_) => 3,
            Error::Infeasible { .. } => 4,
            Error::Parse { .. } => 5,
            Error::Io(_) => 6,
            Error::Json(_) => 7,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
