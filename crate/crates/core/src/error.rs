use alloc::boxed::Box;
use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("non-participant has no value")]
    EmptyEvaluation,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("projection QP is infeasible (max violation {max_violation:e})")]
    QpInfeasible { max_violation: f64 },
    #[error("projection QP exceeded {iterations} iterations")]
    QpIterationLimit { iterations: usize },
    #[error("filter failed at stream index {index}: {source}")]
    Filter { index: usize, source: Box<Error> },
    #[error("communication graph restricted to the participants is disconnected (removed agent: {removed:?})")]
    Disconnected { removed: Option<usize> },
    #[error("missing sequence data: {0}")]
    MissingSequence(String),
    #[error("missing budget proposal for agent {0}")]
    MissingBudget(usize),
    #[error("empty strategy grid for agent {0}")]
    EmptyGrid(usize),
    #[error("strategy grid has {profiles} profiles, above the limit of {limit}")]
    GridTooLarge { profiles: u128, limit: u128 },
    #[error("payoff tensor cell {0} has not been filled")]
    UnfilledCell(usize),
    #[error("centralized minimizer failed: {0}")]
    Oracle(String),
}
