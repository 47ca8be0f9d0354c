use thiserror::Error;

/// Errors raised by synthesis, transforms, simulation and analysis.
///
/// Variant names are part of the CLI contract: validation failures are
/// reported with the variant name in the message.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackstepError {
    #[error("NotControllable: controllability matrix has rank {rank} < {n}")]
    NotControllable { rank: usize, n: usize },

    #[error("BadGeometry: {0}")]
    BadGeometry(String),

    #[error("BadDimension: {0}")]
    BadDimension(String),

    #[error("PolesNotConjugateClosed: pole {0} has no conjugate partner")]
    PolesNotConjugateClosed(String),

    #[error("NotHurwitz: {0}")]
    NotHurwitz(String),

    #[error("AsymmetricQ: |Q - Q^T| = {0:e}")]
    AsymmetricQ(f64),

    #[error("NotPositiveDefinite: {0}")]
    NotPositiveDefinite(String),

    #[error("MarginTooSmall: margin {0} must exceed 1")]
    MarginTooSmall(f64),

    #[error("OutOfDomain: {0}")]
    OutOfDomain(String),

    #[error("NegativeArgument: {0}")]
    NegativeArgument(f64),

    #[error("NoConvergenceBudget: {iterations} iterations, last increment {last_increment:e}")]
    NoConvergenceBudget { iterations: usize, last_increment: f64 },

    #[error("GridMismatch: {0}")]
    GridMismatch(String),

    #[error("SingularTransform: diagonal entry {value:e} at node {index}")]
    SingularTransform { index: usize, value: f64 },

    #[error("StepUnstable: norm grew by {ratio:e} at t = {t}")]
    StepUnstable { t: f64, ratio: f64 },

    #[error("NonPositiveValues: {0}")]
    NonPositiveValues(String),

    #[error("InsufficientSamples: {got} samples in fit window, need {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("Config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, BackstepError>;
