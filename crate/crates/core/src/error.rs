//! Error taxonomy shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, KvaError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KvaError {
    // -- model validation --
    #[error("covariance block A is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("joint covariance is inconsistent: residual variance {residual:.6e} < 0")]
    InconsistentCovariance { residual: f64 },
    #[error("accrual factor 1+r+lambda = {accrual} must be positive")]
    BadAccrual { accrual: f64 },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),

    // -- linear pricing --
    #[error("capital budget infeasible at q = {q}: need q^2 < {q_max}^2")]
    CapitalInfeasible { q: f64, q_max: f64 },
    #[error("excess return mu = 0, multiplier degenerates and 1/chi is undefined")]
    DegenerateDrift,
    #[error("portfolio variance must be positive, got {0}")]
    ZeroVariance(f64),

    // -- monte carlo --
    #[error("Richardson extrapolants disagree by {spread:.3e} > 5 stderr ({stderr:.3e})")]
    NoConvergence { spread: f64, stderr: f64 },

    // -- shareholder optimizer --
    #[error("constraint set empty at q = {q}")]
    Infeasible { q: f64 },
    #[error("no optimizer restart reached first-order tolerance")]
    MaxIterations,
    #[error("constraint gradient vanished at the iterate")]
    ZeroGradient,
    #[error("d/dq constraint identity residual {residual:.3e} exceeds {tol:.3e}")]
    ConstraintIdentityViolated { residual: f64, tol: f64 },

    // -- median --
    #[error("degenerate payoff distribution (std = {std})")]
    DegenerateDistribution { std: f64 },
    #[error("solvency assumption violated: optimal mean equity {value:.6e} <= 0 at q = {q}")]
    SolvencyAssumptionViolated { q: f64, value: f64 },

    // -- oracle --
    #[error("oracle constraint set empty at q = {q}")]
    InfeasibleConstraint { q: f64 },
    #[error("no sign change in bracket [{lo}, {hi}] after widening")]
    BracketInvalid { lo: f64, hi: f64 },
    #[error("bisection exhausted {iters} iterations before reaching tolerance")]
    ToleranceNotReached { iters: usize },
    #[error("equity variance degenerate at the evaluation point")]
    DegenerateVariance,
}
