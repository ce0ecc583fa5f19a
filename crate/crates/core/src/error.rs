use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by model construction, estimation and inference.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument fell outside its mathematical domain (invalid dependence
    /// parameter, probability outside `[0,1]`, non-positive scale, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Vector/matrix dimensions do not line up with the dataset columns.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A requested Spearman rho cannot be produced by the copula family.
    #[error("Spearman rho {rho_sp} is unreachable for the {family} copula: {reason}")]
    UnreachableSpearman {
        family: &'static str,
        rho_sp: f64,
        reason: String,
    },

    /// Root-finding target outside the attainable range.
    #[error("no root: {0}")]
    NoRoot(String),

    /// The dataset cannot support estimation (e.g. an outcome with no
    /// variation).
    #[error("degenerate dataset: {0}")]
    DegenerateData(String),

    /// Every optimizer start diverged or produced non-finite values.
    #[error("optimization failed from all {starts} start points: {detail}")]
    AllStartsFailed { starts: usize, detail: String },

    /// The estimated information matrix cannot be inverted.
    #[error("singular information matrix (min eigenvalue {min_eigenvalue:.3e})")]
    SingularInformation { min_eigenvalue: f64 },

    /// Too many bootstrap refits failed to trust the resampling distribution.
    #[error("{failed} of {total} bootstrap refits failed (limit {limit})")]
    BootstrapFailures {
        failed: usize,
        total: usize,
        limit: usize,
    },

    /// Too many Monte Carlo replications failed to trust the summary.
    #[error("{failed} of {total} Monte Carlo replications failed (limit {limit})")]
    ReplicationFailures {
        failed: usize,
        total: usize,
        limit: usize,
    },

    /// The identification-failure fixed point did not reach its tolerance.
    #[error("distribution solver did not converge: residual {residual:.3e} after {iterations} iterations")]
    SolverDidNotConverge { residual: f64, iterations: usize },
}
