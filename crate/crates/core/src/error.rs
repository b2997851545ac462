use thiserror::Error;

/// Errors surfaced by the solver and analysis layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),

    #[error("step size {step} exceeds 1/L = {limit}")]
    StepTooLarge { step: f64, limit: f64 },

    #[error("halfspace system admits no feasible point (residual {residual:.3e})")]
    InfeasibleHalfspaces { residual: f64 },

    #[error("alternating projections did not converge within {sweeps} sweeps (residual {residual:.3e})")]
    DykstraNonConvergence { sweeps: usize, residual: f64 },

    #[error("subdifferential not computable in closed form for this regularizer")]
    SubdifferentialUnsupported,

    #[error("matrix is not positive definite (min eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { min_eig: f64 },

    #[error("invalid constraint parameters: {0}")]
    InvalidConstraint(String),

    #[error("iteration cap {cap} exceeded, final residual {residual:.3e}")]
    IterationCapExceeded { cap: usize, residual: f64 },

    #[error("multiplier recovery failed: stationarity residual {residual:.3e} exceeds {tol:.3e} (degenerate active-constraint gradients?)")]
    DegenerateMultipliers { residual: f64, tol: f64 },

    #[error("point fails the stationarity check (gradient-mapping norm {residual:.3e})")]
    NotStationary { residual: f64 },

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("epoch step count K = {0:.3e} exceeds the 1e7 cap; condition number too large")]
    EpochStepsTooLarge(f64),

    #[error("theorem precondition violated: N/log N = {lhs:.1} < {rhs:.1}")]
    PreconditionViolated { lhs: f64, rhs: f64 },

    #[error("projected SGD requires an indicator regularizer")]
    NonIndicatorRegularizer,

    #[error("sample budget exhausted: needed {needed}, had {budget}")]
    SampleBudgetExhausted { needed: usize, budget: usize },

    #[error("{0}")]
    Invalid(String),
}
