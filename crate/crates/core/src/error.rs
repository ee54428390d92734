use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A simulation resource limit (qubit cap, dense-matrix cap) would be exceeded.
    #[error("resource limit exceeded: {0}")]
    Resource(String),

    /// Numeric input failed validation (non-unitary gate, effect out of range, ...).
    #[error("validation failed: {0}")]
    Validation(String),

    /// Caller misuse: dead or duplicate labels, wrong arity, malformed arguments.
    #[error("invalid usage: {0}")]
    Usage(String),

    /// A party acted on registers it does not hold.
    #[error("protocol violation: {0}")]
    ProtocolViolation(String),

    /// A numerical routine failed to converge or two solvers disagree.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("malformed document: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Whether the error is caused by user-supplied input rather than an internal fault.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Resource(_) | Error::Validation(_) | Error::Usage(_) | Error::Parse(_)
        )
    }
}
