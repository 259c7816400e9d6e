//! Crate-wide error type. Estimation code returns structured errors so the
//! CLI can report what failed (which row, which column, which quantity
//! degenerated) instead of panicking mid-pipeline.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// CSV ingestion problem tied to a specific location. `line` is the
    /// 1-based line number in the file (the header is line 1).
    #[error("csv error at line {line}, column `{column}`: {message}")]
    Csv {
        line: usize,
        column: String,
        message: String,
    },

    /// A labeled source row arrived without an outcome value.
    #[error("missing outcome at line {line}: labeled source rows require y ∈ {{0,1}}")]
    MissingOutcome { line: usize },

    /// One of the three cohorts came out empty after partitioning.
    #[error("empty cohort: no {cohort} rows in input")]
    EmptyCohort { cohort: &'static str },

    /// Invalid basis term (bad covariate index or degenerate interaction).
    #[error("invalid basis term: {0}")]
    InvalidBasis(String),

    /// Structural mismatch between inputs (dimensions, lengths, ranges).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Likelihood is degenerate: some coefficient diverged during iteration,
    /// which indicates (quasi-)complete separation.
    #[error(
        "separation detected: |coefficient| reached {max_abs_coef:.1} during iteration; \
         use a penalized fit"
    )]
    Separation { max_abs_coef: f64 },

    /// Iterative fit ran out of iterations. `trace` holds the last gradient
    /// max-norms observed, most recent last.
    #[error("fit did not converge after {iterations} iterations (gradient trace {trace:?})")]
    NonConvergence { iterations: usize, trace: Vec<f64> },

    /// A ratio-type estimate has a vanishing denominator.
    #[error("degenerate denominator in {quantity}: {detail}")]
    DegenerateDenominator {
        quantity: &'static str,
        detail: String,
    },

    /// Requested false-positive-rate level cannot be reached on this sample.
    #[error("FPR level {u0} unattainable: minimum achievable FPR is {min_fpr}")]
    UnattainableFpr { u0: f64, min_fpr: f64 },

    /// Too many perturbation draws failed to be summarized honestly.
    #[error("{failed} of {total} perturbation draws failed (limit is 5%)")]
    TooManyFailedDraws { failed: usize, total: usize },

    /// Configuration value outside its documented range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    CsvFile(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
