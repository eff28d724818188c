//! Error taxonomy shared by every module.

use thiserror::Error;

/// Unified error type.
///
/// `MalformedConfig` signals unusable input (vector length mismatch,
/// nonpositive step, ...) and is distinct from an assumption violation,
/// which is reported through [`crate::model::ValidationReport`] instead.
#[derive(Debug, Error)]
pub enum Error {
    /// Structurally unusable configuration or input data.
    #[error("malformed config: {0}")]
    MalformedConfig(String),

    /// A state variable left the configured guard band, signalling an
    /// unstable step size or closure level for the given parameters.
    #[error("numerical blowup: {quantity} = {value:.6e} at t = {t}")]
    NumericalBlowup {
        quantity: &'static str,
        value: f64,
        t: f64,
    },

    /// Iterative SVD failed to reach tolerance.
    #[error("SVD did not converge after {sweeps} sweeps (off-diagonal {off:.3e})")]
    NonConvergence { sweeps: usize, off: f64 },

    /// Low-rank truncation level outside `1..=rank`.
    #[error("rank {theta} out of range (decomposition has rank {rank})")]
    RankOutOfRange { theta: usize, rank: usize },

    /// The request is valid but outside what this solver supports
    /// (e.g. the moment solver is restricted to affine drift, rho = 1/2).
    #[error("solver restriction: {0}")]
    SolverRestriction(String),

    /// File-format problem while reading a matrix or scenario.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn malformed(msg: impl Into<String>) -> Self {
        Error::MalformedConfig(msg.into())
    }
}
