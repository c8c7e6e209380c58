use thiserror::Error;

/// Every failure mode of the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GwError {
    #[error("offspring law is empty")]
    EmptyDistribution,
    #[error("offspring law puts mass on zero children")]
    ZeroOffspringMass,
    #[error("probability of {count} children must lie in (0, 1], got {value}")]
    InvalidProbability { count: u32, value: f64 },
    #[error("offspring probabilities sum to {sum}, not 1")]
    NotNormalized { sum: f64 },
    #[error("mean offspring {mean} is not supercritical")]
    Subcritical { mean: f64 },
    #[error("argument outside the admissible domain: {0}")]
    DomainError(String),
    #[error("scaling depth {needed} exceeds the configured maximum {max}")]
    DepthExceeded { needed: usize, max: usize },
    #[error("no sign change of the saddle equation in [{lo}, {hi}]")]
    BracketFailure { lo: f64, hi: f64 },
    #[error("constant undefined: the law has a single support point")]
    ConstantUndefined,
    #[error("minimal offspring 1 is not supported here; use the mu = 1 routines")]
    Mu1NotSupported,
    #[error("routine requires minimal offspring 1")]
    NotMu1,
    #[error("degenerate law: all mass on the minimal offspring number")]
    DegenerateLaw,
    #[error("epsilon {eps} too large: n = {n}, N = {big_n}")]
    EpsilonTooLarge { eps: f64, n: i64, big_n: f64 },
    #[error("copy count {copies} is not an integer")]
    NonIntegralCopies { copies: f64 },
    #[error("inversion quadrature did not converge: {0}")]
    QuadratureDiverged(String),
    #[error("every requested bin lost all precision to cancellation")]
    CancellationLoss,
    #[error("generation size exceeds u64 range at generation {generation}")]
    DepthOverflow { generation: usize },
    #[error("zero acceptances in {trials} trials")]
    BudgetExhausted { trials: u64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = GwError> = std::result::Result<T, E>;
