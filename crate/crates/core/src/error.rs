use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid environment: {0}")]
    InvalidEnv(&'static str),
    #[error("action applied to a terminal state")]
    ActionOnTerminal,
    #[error("token {token} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("reward requested for a non-terminal state")]
    NonTerminalReward,
    #[error("reward table has no entry for terminal index {0}")]
    MissingTableEntry(u64),
    #[error("state space of {size} terminals exceeds the enumeration cap {cap}")]
    SpaceTooLarge { size: u128, cap: u64 },
    #[error("policy queried at a terminal state")]
    TerminalStateQuery,
    #[error("backward policy queried at the initial state")]
    InitialStateQuery,
    #[error("gradient shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("reward must be strictly positive, got {0}")]
    NonPositiveReward(f64),
    #[error("backtracking thresholds must satisfy t_min < t_max")]
    DegenerateThresholds,
    #[error("invalid backtracking configuration: {0}")]
    InvalidBacktrack(&'static str),
    #[error("rewind of {steps} steps outside 1..={len}")]
    StepsOutOfRange { steps: usize, len: usize },
    #[error("state does not lie on the trajectory")]
    NotOnTrajectory,
    #[error("Pearson correlation undefined for a constant vector")]
    ConstantVector,
    #[error("length mismatch: {0}")]
    LengthMismatch(&'static str),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(&'static str),
}
