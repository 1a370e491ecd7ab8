use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid {field}: {reason}")]
    Validation { field: &'static str, reason: String },

    #[error("{what} index {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("link endpoints coincide: {0}")]
    Singularity(&'static str),

    #[error("cannot place {wanted} nodes on a grid of {cells} cells")]
    Placement { wanted: usize, cells: usize },

    #[error("allocation infeasible: {0}")]
    Infeasible(String),

    #[error("action {action} is not legal in local cell {cell}")]
    IllegalAction { cell: usize, action: usize },

    #[error("episode too short for an energy rate: {steps} steps (need at least 4)")]
    EpisodeTooShort { steps: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("oracle guard exceeded: {0}")]
    GuardExceeded(String),

    #[error("value iteration did not converge within {sweeps} sweeps")]
    NonConvergence { sweeps: usize },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::Validation {
            field,
            reason: reason.into(),
        }
    }
}
