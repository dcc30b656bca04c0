use thiserror::Error;

/// Everything that can go wrong while designing or simulating an observer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("channel {agent} is invalid: {reason}")]
    InvalidChannel { agent: usize, reason: String },

    #[error("plant is not jointly observable: stacked observability rank {rank} < {n}")]
    NotJointlyObservable { rank: usize, n: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("certificate cannot be issued: {0}")]
    Certificate(String),

    #[error("infeasible timing: {0}")]
    Timing(String),

    #[error("schedule is not constant on the iteration windows I_s(k) (asynchronous operation requires it): {0}")]
    ConstancyViolated(String),

    #[error("decay measurement failed: {0}")]
    Measurement(String),

    #[error("internal numerical failure: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
