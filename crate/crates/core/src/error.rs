use thiserror::Error;

/// Errors shared across the solver, propagation and optimization stages.
#[derive(Debug, Clone, Error)]
pub enum CoreError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("quadrature did not stabilize: last change {last_change:e} at order {order}")]
    QuadratureNotConverged { order: usize, last_change: f64 },

    #[error(
        "basis truncation not converged: energies drift by {drift:e} \u{127}\u{3c9} \
         between n_basis={n_basis} and n_basis={n_retry}"
    )]
    TruncationNotConverged {
        n_basis: usize,
        n_retry: usize,
        drift: f64,
    },

    #[error("ground doublet parity order violated: lowest state parity {lower}, next {upper}")]
    ParityOrder { lower: i8, upper: i8 },

    #[error("index {index} out of bounds for basis of size {size}")]
    IndexOutOfBounds { index: usize, size: usize },

    #[error("root bracketing unstable: {roots_coarse} roots on coarse grid, {roots_fine} after refinement")]
    BracketingUnstable {
        roots_coarse: usize,
        roots_fine: usize,
    },

    #[error("inconsistent truncations: {0}")]
    InconsistentTruncation(String),

    #[error("propagation norm drift {drift:e} exceeds 1e-8; reduce the step size")]
    NormDrift { drift: f64 },

    #[error("pulse evaluated at t={t} outside [0, {tau}]")]
    PulseOutOfDomain { t: f64, tau: f64 },

    #[error("all optimization candidates failed: {failures} objective evaluations errored")]
    AllCandidatesFailed { failures: usize },

    #[error("eigensolver failed to converge")]
    EigenFailed,
}

pub type Result<T> = std::result::Result<T, CoreError>;
