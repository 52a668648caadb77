//! Error types shared across the library.

use thiserror::Error;

/// Errors raised while constructing or querying model specifications.
#[derive(Debug, Clone, Error)]
pub enum ModelError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("maturity {x} outside [0, {t_star}]")]
    MaturityOutOfRange { x: f64, t_star: f64 },
    #[error("operation not supported for family {family}")]
    UnsupportedFamily { family: &'static str },
    #[error("invalid utility parameters: {0}")]
    InvalidUtility(String),
}

/// Errors raised by the value-function kernel.
#[derive(Debug, Clone, Error)]
pub enum KernelError {
    #[error("infinite-horizon kernel diverges (estimated integrand growth rate {rate:.6e} >= 0); \
             a drifting short rate makes the expected discounted utility unbounded")]
    DivergentKernel { rate: f64 },
    #[error("quadrature did not converge: {0}")]
    QuadratureFailure(String),
    #[error("kernel value not strictly positive ({value}); numeric failure")]
    NonPositive { value: f64 },
    #[error("requires t <= u, got t = {t}, u = {u}")]
    BadTimeOrder { t: f64, u: f64 },
    #[error("regime mismatch: {0}")]
    BadRegime(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Errors raised while building or solving for portfolio strategies.
#[derive(Debug, Clone, Error)]
pub enum StrategyError {
    #[error("augmented exposure matrix is rank deficient (rank {rank} < {required}) for maturities {maturities:?}; \
             add maturities to span the target exposure")]
    RankDeficient {
        maturities: Vec<f64>,
        rank: usize,
        required: usize,
    },
    #[error("duplicate maturities in {maturities:?}")]
    DuplicateMaturities { maturities: Vec<f64> },
    #[error("consumption weight a = 0: consumption is identically zero")]
    NoConsumptionUtility,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Errors raised by the Monte Carlo engine.
#[derive(Debug, Clone, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("scheme {scheme} does not apply to family {family}")]
    SchemeMismatch { scheme: &'static str, family: &'static str },
    #[error("policy returned a non-finite value at t = {t}")]
    NonFinitePolicy { t: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
}
