use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the finite-element, integration and reduced-order layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("value {value:e} at Dirichlet node x={x} (component {component}) is not zero")]
    InconsistentBc {
        component: usize,
        x: f64,
        value: f64,
    },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("non-finite state encountered: {0}")]
    NonFiniteState(String),

    #[error("integration failed at t={t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },

    #[error("maximum number of steps ({0}) exceeded")]
    MaxStepsExceeded(usize),

    #[error("no oscillation detected before t={0}")]
    NoOscillation(f64),

    #[error("orbit has not converged")]
    NotConverged,

    #[error("inconsistent snapshot grid: {0}")]
    InconsistentGrid(String),

    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),

    #[error("model has no Lipschitz bound")]
    MissingLipschitz,

    #[error("bad store format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("checksum mismatch in {0}")]
    Checksum(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
