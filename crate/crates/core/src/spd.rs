//! Symmetric positive definite matrices with cached Cholesky factor and
//! log-determinant, and ordered per-mode factor lists.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kron::FactorDims;
use crate::linalg::{relative_asymmetry, sym_matrix_fn, symmetry_tol};
use crate::scalar::Real;

/// An SPD matrix. Construction validates symmetry and positive
/// definiteness, and caches the lower Cholesky factor and
/// `log|Σ| = 2·Σ log diag(chol)`. Instances are immutable.
#[derive(Debug, Clone)]
pub struct SpdMatrix<T: Real> {
    values: DMatrix<T>,
    chol: Cholesky<T, Dyn>,
    logdet: T,
}

impl<T: Real> SpdMatrix<T> {
    pub fn new(values: DMatrix<T>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} matrix is not square",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("SPD matrix entries".into()));
        }
        let asym = relative_asymmetry(&values);
        if asym > symmetry_tol::<T>() {
            return Err(Error::NotSpd(format!(
                "relative asymmetry {asym:e} exceeds tolerance"
            )));
        }
        let values = crate::linalg::symmetrize(&values);
        let chol = Cholesky::new(values.clone())
            .ok_or_else(|| Error::NotSpd("Cholesky factorization failed".into()))?;
        let mut logdet = T::zero();
        for i in 0..values.nrows() {
            logdet += chol.l_dirty()[(i, i)].ln();
        }
        logdet *= T::of(2.0);
        Ok(Self {
            values,
            chol,
            logdet,
        })
    }

    /// Identity of the given order.
    pub fn identity(order: usize) -> Self {
        Self::new(DMatrix::identity(order, order)).expect("identity is SPD")
    }

    pub fn order(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<T> {
        &self.values
    }

    /// Lower Cholesky factor `L` with `Σ = LLᵀ`.
    pub fn chol_lower(&self) -> DMatrix<T> {
        self.chol.l()
    }

    pub fn logdet(&self) -> T {
        self.logdet
    }

    /// `Σ⁻¹`, dense, through the cached factorization.
    pub fn inverse(&self) -> DMatrix<T> {
        self.chol.inverse()
    }

    /// Solves `Σ x = b`.
    pub fn solve(&self, b: &DMatrix<T>) -> DMatrix<T> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<T>) -> DVector<T> {
        self.chol.solve(b)
    }

    /// `Σ^{1/2}` via symmetric eigendecomposition.
    pub fn sqrt(&self) -> Result<DMatrix<T>> {
        sym_matrix_fn(&self.values, true, |x| x.sqrt())
    }

    /// `Σ^{-1/2}` via symmetric eigendecomposition.
    pub fn inv_sqrt(&self) -> Result<DMatrix<T>> {
        sym_matrix_fn(&self.values, true, |x| T::one() / x.sqrt())
    }

    /// Rescales to unit determinant: `Σ / |Σ|^{1/d}`.
    pub fn unit_determinant(&self) -> Result<Self> {
        let d = T::of_usize(self.order());
        let scale = (-self.logdet / d).exp();
        Self::new(&self.values * scale)
    }
}

/// Ordered list of per-mode SPD matrices `{Σ_i}` representing `⊗_i Σ_i`
/// (first factor outermost) without materializing it.
#[derive(Debug, Clone)]
pub struct FactorSet<T: Real> {
    dims: FactorDims,
    factors: Vec<SpdMatrix<T>>,
}

impl<T: Real> FactorSet<T> {
    pub fn new(factors: Vec<SpdMatrix<T>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidConfig(
                "factor set needs at least one mode".into(),
            ));
        }
        let dims = FactorDims::new(&factors.iter().map(|f| f.order()).collect::<Vec<_>>())?;
        Ok(Self { dims, factors })
    }

    pub fn from_matrices(mats: Vec<DMatrix<T>>) -> Result<Self> {
        Self::new(
            mats.into_iter()
                .map(SpdMatrix::new)
                .collect::<Result<Vec<_>>>()?,
        )
    }

    /// Identity factors of the given extents.
    pub fn identity(dims: &FactorDims) -> Self {
        Self::new(
            dims.dims()
                .iter()
                .map(|&d| SpdMatrix::identity(d))
                .collect(),
        )
        .expect("identity factors are SPD")
    }

    pub fn dims(&self) -> &FactorDims {
        &self.dims
    }

    pub fn n_modes(&self) -> usize {
        self.factors.len()
    }

    pub fn factor(&self, k: usize) -> &SpdMatrix<T> {
        &self.factors[k - 1]
    }

    pub fn factors(&self) -> &[SpdMatrix<T>] {
        &self.factors
    }

    /// Per-mode inverse matrices, mode-1-first.
    pub fn inverses(&self) -> Vec<DMatrix<T>> {
        self.factors.iter().map(|f| f.inverse()).collect()
    }

    /// Per-mode values, mode-1-first.
    pub fn matrices(&self) -> Vec<DMatrix<T>> {
        self.factors.iter().map(|f| f.values().clone()).collect()
    }

    /// `log|⊗Σ_i| = Σ_i d_{-i}·log|Σ_i|`.
    pub fn kron_logdet(&self) -> T {
        self.factors
            .iter()
            .enumerate()
            .map(|(i, f)| T::of_usize(self.dims.comp_product(i + 1)) * f.logdet())
            .fold(T::zero(), |a, b| a + b)
    }

    /// Materializes `⊗Σ_i`. Desk-scale only.
    pub fn dense(&self) -> DMatrix<T> {
        crate::kron::kronecker_product(&self.matrices())
    }

    /// Replaces factor `k` (1-based).
    pub fn with_factor(&self, k: usize, f: SpdMatrix<T>) -> Result<Self> {
        if f.order() != self.dims.dim(k) {
            return Err(Error::ShapeMismatch(format!(
                "factor for mode {k} must have order {}",
                self.dims.dim(k)
            )));
        }
        let mut factors = self.factors.clone();
        factors[k - 1] = f;
        Self::new(factors)
    }
}
