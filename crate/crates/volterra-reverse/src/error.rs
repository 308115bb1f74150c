//! Error types shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, VolterraError>;

#[derive(Error, Debug)]
pub enum VolterraError {
    /// An argument lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative method failed to converge within its budget.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A caller violated a documented contract (mismatched grids, bad shapes, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// The Euler state exceeded the blow-up guard.
    #[error("divergence: {0}")]
    Divergence(String),

    /// Flow inversion did not reach the requested tolerance.
    #[error("inversion failure: {0}")]
    Inversion(String),

    /// Integrand class not representable (non-cylindrical coefficients, ...).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Bad experiment configuration or CLI usage.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
