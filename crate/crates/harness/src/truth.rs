//! Ground-truth covariance generation for the simulated experiments, and
//! dense Gaussian simulation for the misspecified (low-rank-perturbed)
//! case.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use multiway_vb::kron::{FactorDims, SufficientStats};
use multiway_vb::spd::{FactorSet, SpdMatrix};

fn standard_normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Well-conditioned per-mode truth: `Σ_i = LLᵀ` with `L` lower-triangular
/// standard normal plus `d_i` added on the diagonal, factors `i > 1`
/// normalized to unit determinant.
pub fn well_conditioned_truth(dims: &FactorDims, rng: &mut impl Rng) -> Result<FactorSet<f64>> {
    let mut factors = Vec::with_capacity(dims.n_modes());
    for (idx, &d) in dims.dims().iter().enumerate() {
        let mut l = DMatrix::<f64>::zeros(d, d);
        for i in 0..d {
            for j in 0..=i {
                l[(i, j)] = standard_normal(rng);
            }
            l[(i, i)] += d as f64;
        }
        let mut sigma =
            SpdMatrix::new(&l * l.transpose()).map_err(crate::error::HarnessError::Core)?;
        if idx > 0 {
            sigma = sigma
                .unit_determinant()
                .map_err(crate::error::HarnessError::Core)?;
        }
        factors.push(sigma);
    }
    FactorSet::new(factors).map_err(Into::into)
}

/// Misspecified truth `Σ* = ⊗Σ_i + Σ_{i=1}^{r} x_i x_iᵀ` with
/// `x_i ~ N(0, ξ·I)`. Dense; desk scale only.
pub fn misspecified_truth(
    base: &FactorSet<f64>,
    r: usize,
    xi: f64,
    rng: &mut impl Rng,
) -> Result<SpdMatrix<f64>> {
    let p = base.dims().total();
    let mut sigma = base.dense();
    let sd = xi.sqrt();
    for _ in 0..r {
        let x = DVector::from_fn(p, |_, _| sd * standard_normal(rng));
        sigma.ger(1.0, &x, &x, 1.0);
    }
    SpdMatrix::new(multiway_vb::linalg::symmetrize(&sigma)).map_err(Into::into)
}

/// Simulates `n` draws of `N(0, Σ)` from a dense covariance and returns
/// their Gram matrix over the given mode structure.
pub fn simulate_dense_gaussian(
    sigma: &SpdMatrix<f64>,
    dims: &FactorDims,
    n: usize,
    rng: &mut impl Rng,
) -> Result<SufficientStats<f64>> {
    let p = sigma.order();
    let l = sigma.chol_lower();
    let mut s = DMatrix::<f64>::zeros(p, p);
    for _ in 0..n {
        let z = DVector::from_fn(p, |_, _| standard_normal(rng));
        let y = &l * z;
        s.ger(1.0, &y, &y, 1.0);
    }
    SufficientStats::new(dims.clone(), s).map_err(Into::into)
}
