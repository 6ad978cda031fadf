//! Variational Bayes for covariances of multiway Gaussian data.
//!
//! Fits inverse-Wishart variational approximations — a joint approximation
//! with Kronecker-structured scale `IW(ν_v, ⊗A_i)` and a per-mode mean-field
//! approximation — to posteriors over the covariance of tensor-variate
//! observations, by Riemannian gradient ascent on the product of SPD
//! manifolds under the pullback of the affine-invariant metric.
//!
//! The crate is layered bottom-up:
//! - [`kron`]: index algebra, symmetric folding, mode products, and the
//!   partial-trace operator behind every gradient.
//! - [`spd`] / [`geometry`]: SPD matrices with cached factorizations, the
//!   affine-invariant exponential map, tangent projection, pullback metrics
//!   and Riemannian gradient conversion.
//! - [`sampling`]: tensor-normal simulation, Bartlett Wishart draws, the
//!   multiway Cholesky inverse-Wishart sampler and predictive diagnostics.
//! - [`elbo`]: evidence lower bounds and Euclidean gradients of the joint
//!   and mean-field approximations.
//! - [`optimizer`]: the Riemannian ascent loop, convergence monitoring and
//!   run traces.
//!
//! Everything numeric is generic over the scalar type through
//! [`scalar::Real`]; the aliases below pin the common `f64` instantiations.

pub mod elbo;
pub mod error;
pub mod geometry;
pub mod kron;
pub mod linalg;
pub mod optimizer;
pub mod sampling;
pub mod scalar;
pub mod spd;
pub mod special;
pub mod testing;

pub use error::{Error, Result};
pub use scalar::Real;

/// `f64` instantiations of the main types.
pub type SpdMatrix64 = spd::SpdMatrix<f64>;
pub type FactorSet64 = spd::FactorSet<f64>;
pub type SufficientStats64 = kron::SufficientStats<f64>;
pub type JointState64 = elbo::JointState<f64>;
pub type MeanFieldState64 = elbo::MeanFieldState<f64>;
pub type OptimizerConfig64 = optimizer::OptimizerConfig<f64>;
pub type Trace64 = optimizer::Trace<f64>;
