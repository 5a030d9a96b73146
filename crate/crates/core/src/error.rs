use thiserror::Error;

use crate::model::ModelSlot;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input is empty")]
    EmptyInput,

    #[error("row {row}, column {column:?}: {message}")]
    Malformed {
        row: usize,
        column: String,
        message: String,
    },

    #[error("row {row} has {found} fields, expected {expected}")]
    Arity {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("unknown point id {0}")]
    UnknownPoint(u64),

    #[error("unknown feature {0:?}")]
    UnknownFeature(String),

    #[error("feature {feature:?} expects a {expected} value")]
    TypeMismatch {
        feature: String,
        expected: &'static str,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("model slot {0} is already registered")]
    SlotOccupied(ModelSlot),

    #[error("no model registered in slot {0}")]
    NoModel(ModelSlot),

    #[error("task mismatch: {0}")]
    TaskMismatch(String),

    /// Transport failure or non-success status from a remote model. Safe to retry.
    #[error("remote model request failed{}: {message}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Remote {
        status: Option<u16>,
        message: String,
    },

    #[error("remote model protocol error: {0}")]
    Protocol(String),

    #[error("labels contain no {0} examples")]
    SingleClass(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Errors caused by the caller's input, as opposed to backend or IO failures.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::Remote { .. } | Error::Protocol(_) | Error::Io(_)
        )
    }

    pub fn is_retriable(&self) -> bool {
        matches!(self, Error::Remote { .. })
    }

    /// Short machine-readable code used by the HTTP and CLI surfaces.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyInput => "empty_input",
            Error::Malformed { .. } => "malformed_input",
            Error::Arity { .. } => "malformed_input",
            Error::UnknownPoint(_) => "unknown_point",
            Error::UnknownFeature(_) => "unknown_feature",
            Error::TypeMismatch { .. } => "type_mismatch",
            Error::InvalidModel(_) => "invalid_model",
            Error::SlotOccupied(_) => "slot_occupied",
            Error::NoModel(_) => "no_model",
            Error::TaskMismatch(_) => "task_mismatch",
            Error::Remote { .. } => "remote_unavailable",
            Error::Protocol(_) => "remote_protocol",
            Error::SingleClass(_) => "single_class",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Io(_) => "io",
        }
    }
}
