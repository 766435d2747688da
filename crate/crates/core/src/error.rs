use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// A caller-supplied argument violates a documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),
    /// A matrix does not satisfy the stochastic / rate-matrix invariants.
    #[error("invalid chain: {0}")]
    InvalidChain(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    /// Simulation reached a state whose outgoing row carries no mass.
    #[error("state {state} has no outgoing probability mass")]
    DeadState { state: usize },
    /// The hitting-time system for `target` is singular.
    #[error("chain is not irreducible: hitting-time system for target {target} is singular")]
    Reducible { target: usize },
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
