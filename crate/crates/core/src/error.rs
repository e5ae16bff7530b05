//! Error type shared by every module in the crate.

use thiserror::Error;

/// Errors surfaced by validation, solvers, and recovery procedures.
#[derive(Debug, Error)]
pub enum Error {
    /// Input shapes do not agree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An input failed validation (non-stochastic rows, bad discount, ...).
    /// Inputs are rejected, never silently renormalized.
    #[error("invalid input: {0}")]
    Validation(String),

    /// A quantity left its mathematical domain (e.g. nonpositive stationary
    /// mass where a positive one is required).
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative solver hit its iteration cap.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    /// A dense linear-algebra routine failed (singular factorization,
    /// non-converging SVD, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A friendliness precondition does not hold at the requested tolerances.
    #[error("chain is not friendly (alpha = {alpha:.3e}, beta = {beta:.3e})")]
    Unfriendly { alpha: f64, beta: f64 },

    /// Permutation recovery produced a candidate that fails verification
    /// against the observed chain.
    #[error("recovery verification failed: residual {residual:.3e} exceeds {tolerance:.1e}")]
    RecoveryFailed { residual: f64, tolerance: f64 },

    /// The occupancy threshold retains different numbers of source and
    /// observed states, so no square assignment exists. Reported rather than
    /// guessed around.
    #[error(
        "threshold mismatch: {exact} source states at or above threshold, \
         but {empirical} observed states"
    )]
    ThresholdMismatch { exact: usize, empirical: usize },

    /// The occupancy threshold clips every state.
    #[error("degenerate threshold: no states with stationary mass >= {t}")]
    DegenerateThreshold { t: f64 },

    /// Random instance generation exhausted its retry budget.
    #[error(
        "instance generation failed after {attempts} attempts \
         (best alpha = {best_alpha:.3e}, best beta = {best_beta:.3e})"
    )]
    Generation {
        attempts: usize,
        best_alpha: f64,
        best_beta: f64,
    },

    /// A condition that valid inputs cannot trigger.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, Error>;
