//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by the tensor algebra, geometry, sampling and optimizer layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A multi-index component left the valid range of its mode.
    #[error("index {index} out of bounds for mode {mode} (extent {extent})")]
    IndexOutOfBounds {
        mode: usize,
        index: usize,
        extent: usize,
    },

    /// Two objects that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A matrix required to be symmetric positive definite is not.
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),

    /// Degrees of freedom below the validity threshold of a Wishart family.
    #[error("degrees of freedom {dof} invalid: must exceed {min} for order {order}")]
    InvalidDof { dof: f64, min: f64, order: usize },

    /// A non-finite value appeared in the middle of a computation.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An optimizer or experiment configuration is unusable.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
