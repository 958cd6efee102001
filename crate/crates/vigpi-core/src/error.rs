//! Error types shared across the crate.

use thiserror::Error;

/// Errors from MDP construction, augmentation and the instance builders.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("input MDP must be stationary (layer_of already present)")]
    NotStationary,
    #[error("horizon must be positive, got {0}")]
    InvalidHorizon(usize),
    #[error("unknown instance name `{0}`")]
    UnknownInstance(String),
    #[error("degenerate dimensions: {0}")]
    DegenerateDimensions(String),
}

/// Errors from the dynamic-programming routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DpError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("operation requires a layered (DAG) MDP")]
    NotLayered,
    #[error("stationary MDP requires a horizon for exact optimal values; time-augment first")]
    MissingHorizon,
    #[error("iteration is not guaranteed to contract: stationary MDP with discount {0}")]
    NonContractive(f64),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("iteration cap of {0} exceeded before reaching tolerance")]
    IterationCapExceeded(usize),
}

/// Errors from the improvement-operator catalog.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("operator requires a deterministic input policy")]
    NotDeterministic,
    #[error("log pi is undefined: pi({action}|{state}) = 0")]
    ZeroProbabilityAction { state: usize, action: usize },
    #[error("invalid operator parameter: {0}")]
    InvalidParameter(String),
    #[error("empty support: no probability mass on any value")]
    EmptySupport,
    #[error("operator requires a layered (DAG) MDP for exact evaluation")]
    RequiresLayeredMdp,
    #[error("operator `{0}` cannot be applied as a pure (policy, q) map")]
    NotPolicyQOperator(String),
}

/// Errors raised while driving an engine run; operator and DP failures carry
/// the iteration at which they occurred.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid engine config: {0}")]
    InvalidConfig(String),
    #[error("operator failed at iteration {iteration}: {source}")]
    Operator {
        iteration: usize,
        source: OperatorError,
    },
    #[error("evaluation failed at iteration {iteration}: {source}")]
    Evaluation { iteration: usize, source: DpError },
}
