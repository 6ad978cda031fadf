//! Evidence lower bounds and Euclidean gradients for the joint
//! Kronecker-scale inverse-Wishart approximation and for the mean-field
//! approximation.
//!
//! Both bounds are closed-form expectations; no Monte Carlo enters here.
//! The gradient expressions are derived from the bounds themselves and
//! certified against central finite differences in the test suites — that
//! certification, not any transcription, is the source of truth for them.
//!
//! Degrees of freedom are optimized through the substitution
//! `ν_v = exp(z) + p + 1`, which keeps them feasible by construction; all
//! dof gradients here are reported in `z`-space.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kron::{FactorDims, SufficientStats};
use crate::linalg::{symmetrize, trace_of_product};
use crate::sampling::random_iw_factor_set;
use crate::scalar::Real;
use crate::spd::{FactorSet, SpdMatrix};
use crate::special::{digamma_sum, log_multigamma, trigamma_sum};

/// Prior scale `Λ` of the joint model, dense or Kronecker-factorized.
#[derive(Debug, Clone)]
pub enum PriorScale<T: Real> {
    /// Dense scale. May be rank-deficient (a sample covariance with fewer
    /// observations than dimensions); in that case its log-determinant
    /// constant is omitted from reported ELBO values.
    Dense(DMatrix<T>),
    Factors(FactorSet<T>),
}

/// Inverse-Wishart prior `Σ ~ IW(ν, Λ)` of the joint model.
#[derive(Debug, Clone)]
pub struct JointPrior<T: Real> {
    pub nu: T,
    pub scale: PriorScale<T>,
}

/// Variational state of the joint approximation `q(Σ) = IW(ν_v, ⊗A_i)`,
/// carrying its prior. `ν_v = exp(z) + ∏d_i + 1 > ∏d_i + 1` always.
#[derive(Debug, Clone)]
pub struct JointState<T: Real> {
    z: T,
    factors: FactorSet<T>,
    prior: JointPrior<T>,
}

impl<T: Real> JointState<T> {
    pub fn new(factors: FactorSet<T>, nu_v: T, prior: JointPrior<T>) -> Result<Self> {
        let p = factors.dims().total();
        let floor = T::of_usize(p + 1);
        if !(nu_v > floor) {
            return Err(Error::InvalidDof {
                dof: nu_v.as_f64(),
                min: floor.as_f64(),
                order: p,
            });
        }
        Ok(Self {
            z: (nu_v - floor).ln(),
            factors,
            prior,
        })
    }

    pub fn from_z(factors: FactorSet<T>, z: T, prior: JointPrior<T>) -> Self {
        Self { z, factors, prior }
    }

    /// Deterministic initialization at the mean of the random one:
    /// `A_i = (γ^{1/D}/d_i)·I`, factors `i > 1` renormalized to unit
    /// determinant (their ⊗-scale moves to mode 1), `ν_v = ∏d_i + 2`.
    /// With `γ = tr(S)` this starts at the posterior scale, which is what
    /// keeps the reference step sizes stable from the first iteration.
    pub fn mean_init(dims: &FactorDims, prior: JointPrior<T>, gamma: T) -> Result<Self> {
        let p = dims.total();
        let scale = gamma / T::of_usize(p);
        let mut factors = Vec::with_capacity(dims.n_modes());
        for (i, &d) in dims.dims().iter().enumerate() {
            let c = if i == 0 { scale } else { T::one() };
            factors.push(SpdMatrix::new(DMatrix::from_diagonal_element(d, d, c))?);
        }
        Ok(Self {
            z: T::zero(),
            factors: FactorSet::new(factors)?,
            prior,
        })
    }

    /// Default random initialization: `A_i ~ IW(d_i + 2, (γ^{1/D}/d_i)·I)`
    /// with factors `i > 1` renormalized to unit determinant, and
    /// `ν_v = ∏d_i + 2` (i.e. `z = 0`).
    pub fn random_init(
        dims: &FactorDims,
        prior: JointPrior<T>,
        gamma: T,
        rng: &mut impl rand::Rng,
    ) -> Result<Self> {
        let d = dims.n_modes();
        let root = gamma.powf(T::one() / T::of_usize(d));
        let dofs: Vec<T> = dims.dims().iter().map(|&di| T::of_usize(di + 2)).collect();
        let scales: Vec<T> = dims
            .dims()
            .iter()
            .map(|&di| root / T::of_usize(di))
            .collect();
        let mut factors = random_iw_factor_set(dims, &dofs, &scales, rng)?;
        for i in 2..=d {
            factors = factors.with_factor(i, factors.factor(i).unit_determinant()?)?;
        }
        Ok(Self {
            z: T::zero(),
            factors,
            prior,
        })
    }

    pub fn dims(&self) -> &FactorDims {
        self.factors.dims()
    }

    pub fn z(&self) -> T {
        self.z
    }

    pub fn nu_v(&self) -> T {
        self.z.exp() + T::of_usize(self.dims().total() + 1)
    }

    pub fn factors(&self) -> &FactorSet<T> {
        &self.factors
    }

    pub fn prior(&self) -> &JointPrior<T> {
        &self.prior
    }

    pub fn with_factors(&self, factors: FactorSet<T>) -> Self {
        Self {
            z: self.z,
            factors,
            prior: self.prior.clone(),
        }
    }

    pub fn with_z(&self, z: T) -> Self {
        Self {
            z,
            factors: self.factors.clone(),
            prior: self.prior.clone(),
        }
    }

    /// Moves all determinant mass onto mode 1, leaving `⊗A_i` unchanged:
    /// `A_i ← A_i/|A_i|^{1/d_i}` for `i > 1` and
    /// `A₁ ← A₁·∏_{i>1}|A_i|^{1/d_i}`.
    pub fn rebalanced(&self) -> Result<Self> {
        let d = self.factors.n_modes();
        let mut pushed = T::zero();
        let mut factors = self.factors.clone();
        for i in 2..=d {
            // A_i ← s_i·A_i with s_i = |A_i|^{-1/d_i} scales ⊗A by s_i, so
            // mode 1 compensates with ∏ 1/s_i
            pushed += factors.factor(i).logdet() / T::of_usize(self.dims().dim(i));
            factors = factors.with_factor(i, factors.factor(i).unit_determinant()?)?;
        }
        let a1 = SpdMatrix::new(factors.factor(1).values() * pushed.exp())?;
        factors = factors.with_factor(1, a1)?;
        Ok(self.with_factors(factors))
    }

    /// Variational mean `E_q[Σ] = ⊗A_i / (ν_v − p − 1)` in factor form: the
    /// first factor absorbs the scalar.
    pub fn mean_factors(&self) -> Result<FactorSet<T>> {
        let p = self.dims().total();
        let denom = self.nu_v() - T::of_usize(p + 1);
        let a1 = SpdMatrix::new(self.factors.factor(1).values() / denom)?;
        self.factors.with_factor(1, a1)
    }
}

/// Variational state of the mean-field approximation
/// `q = ∏ IW(ν_{v_i}, A_i)` under the independent-prior model
/// `Σ_i ~ IW(d_i + 2, (γ^{1/D}/d_i)·I)`.
#[derive(Debug, Clone)]
pub struct MeanFieldState<T: Real> {
    z: Vec<T>,
    factors: FactorSet<T>,
    gamma: T,
}

impl<T: Real> MeanFieldState<T> {
    pub fn new(factors: FactorSet<T>, nus: &[T], gamma: T) -> Result<Self> {
        if nus.len() != factors.n_modes() {
            return Err(Error::ShapeMismatch(format!(
                "{} dof values for {} modes",
                nus.len(),
                factors.n_modes()
            )));
        }
        let mut z = Vec::with_capacity(nus.len());
        for (i, &nu) in nus.iter().enumerate() {
            let floor = T::of_usize(factors.dims().dim(i + 1) + 1);
            if !(nu > floor) {
                return Err(Error::InvalidDof {
                    dof: nu.as_f64(),
                    min: floor.as_f64(),
                    order: factors.dims().dim(i + 1),
                });
            }
            z.push((nu - floor).ln());
        }
        Ok(Self { z, factors, gamma })
    }

    pub fn from_z(factors: FactorSet<T>, z: Vec<T>, gamma: T) -> Self {
        Self { z, factors, gamma }
    }

    /// Deterministic initialization at the prior scale:
    /// `A_i = (γ^{1/D}/d_i)·I` and `ν_{v_i} = d_i + 2`.
    pub fn mean_init(dims: &FactorDims, gamma: T) -> Result<Self> {
        let d = dims.n_modes();
        let root = gamma.powf(T::one() / T::of_usize(d));
        let factors = FactorSet::new(
            dims.dims()
                .iter()
                .map(|&di| {
                    SpdMatrix::new(DMatrix::from_diagonal_element(
                        di,
                        di,
                        root / T::of_usize(di),
                    ))
                })
                .collect::<Result<Vec<_>>>()?,
        )?;
        Ok(Self {
            z: vec![T::zero(); d],
            factors,
            gamma,
        })
    }

    /// Default random initialization: per-mode `A_i ~ IW(d_i+2, (γ^{1/D}/d_i)I)`
    /// and `ν_{v_i} = d_i + 2`.
    pub fn random_init(dims: &FactorDims, gamma: T, rng: &mut impl rand::Rng) -> Result<Self> {
        let d = dims.n_modes();
        let root = gamma.powf(T::one() / T::of_usize(d));
        let dofs: Vec<T> = dims.dims().iter().map(|&di| T::of_usize(di + 2)).collect();
        let scales: Vec<T> = dims
            .dims()
            .iter()
            .map(|&di| root / T::of_usize(di))
            .collect();
        let factors = random_iw_factor_set(dims, &dofs, &scales, rng)?;
        Ok(Self {
            z: vec![T::zero(); d],
            factors,
            gamma,
        })
    }

    pub fn dims(&self) -> &FactorDims {
        self.factors.dims()
    }

    pub fn z(&self) -> &[T] {
        &self.z
    }

    pub fn nu(&self, i: usize) -> T {
        self.z[i - 1].exp() + T::of_usize(self.dims().dim(i) + 1)
    }

    pub fn nus(&self) -> Vec<T> {
        (1..=self.factors.n_modes()).map(|i| self.nu(i)).collect()
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn factors(&self) -> &FactorSet<T> {
        &self.factors
    }

    pub fn with_factors(&self, factors: FactorSet<T>) -> Self {
        Self {
            z: self.z.clone(),
            factors,
            gamma: self.gamma,
        }
    }

    pub fn with_z(&self, z: Vec<T>) -> Self {
        Self {
            z,
            factors: self.factors.clone(),
            gamma: self.gamma,
        }
    }

    /// Per-mode prior degrees of freedom `ν_i = d_i + 2`.
    pub fn prior_nu(&self, i: usize) -> T {
        T::of_usize(self.dims().dim(i) + 2)
    }

    /// Per-mode prior scale multiplier `γ^{1/D}/d_i`.
    pub fn prior_scale(&self, i: usize) -> T {
        let d = T::of_usize(self.dims().n_modes());
        self.gamma.powf(T::one() / d) / T::of_usize(self.dims().dim(i))
    }

    /// Variational mean `⊗ A_i/(ν_{v_i} − d_i − 1)` in factor form.
    pub fn mean_factors(&self) -> Result<FactorSet<T>> {
        let mut factors = Vec::with_capacity(self.factors.n_modes());
        for i in 1..=self.factors.n_modes() {
            let denom = self.nu(i) - T::of_usize(self.dims().dim(i) + 1);
            factors.push(SpdMatrix::new(self.factors.factor(i).values() / denom)?);
        }
        FactorSet::new(factors)
    }
}

/// Bound value, Euclidean gradients and reusable contraction output.
#[derive(Debug, Clone)]
pub struct ElboValue<T: Real> {
    pub value: T,
    /// Euclidean gradients `∇_{A_i}`, symmetric, mode-1-first.
    pub grad_factors: Vec<DMatrix<T>>,
    /// Dof gradient(s) in `z`-space: one entry for the joint bound, one per
    /// mode for the mean-field bound.
    pub grad_z: Vec<T>,
    /// Cached `T⁽¹⁾` workspace, reused between the trace term and the first
    /// factor gradient.
    pub trace_workspace: DMatrix<T>,
    /// `tr([⊗A_i⁻¹]·M)` where `M` is `S+Λ` (joint) or `S` (mean-field).
    pub data_trace: T,
}

impl<T: Real> ElboValue<T> {
    fn check_finite(self, what: &str) -> Result<Self> {
        if !self.value.is_finite() {
            return Err(Error::NonFinite(format!("{what} value")));
        }
        if self.grad_z.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("{what} dof gradient")));
        }
        for (i, g) in self.grad_factors.iter().enumerate() {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "{what} gradient for mode {}",
                    i + 1
                )));
            }
        }
        Ok(self)
    }
}

/// Per-state contraction results: the partial traces `T⁽ⁱ⁾` of the
/// (augmented) statistics against the current inverse factors, and the data
/// trace they imply. Independent of the degrees of freedom, so one
/// workspace serves both the dof update and the factor gradients of an
/// iteration.
#[derive(Debug, Clone)]
pub struct TraceWorkspace<T: Real> {
    pub t_ops: Vec<DMatrix<T>>,
    pub data_trace: T,
    pub inverses: Vec<DMatrix<T>>,
}

/// Precomputed joint-model problem data: the augmented statistics `S + Λ`
/// (formed once when `Λ` is dense), the observation count, and the prior
/// normalization constants.
#[derive(Debug, Clone)]
pub struct JointProblem<T: Real> {
    dims: FactorDims,
    n: usize,
    prior_nu: T,
    stats: SufficientStats<T>,
    lambda_factors: Option<Vec<DMatrix<T>>>,
    constant: T,
    prior_logdet_omitted: bool,
}

impl<T: Real> JointProblem<T> {
    pub fn new(stats: &SufficientStats<T>, n: usize, prior: &JointPrior<T>) -> Result<Self> {
        let dims = stats.dims().clone();
        let p = dims.total();
        let pf = T::of_usize(p);
        let nf = T::of_usize(n);
        if !(prior.nu > pf - T::one()) {
            return Err(Error::InvalidDof {
                dof: prior.nu.as_f64(),
                min: (p - 1) as f64,
                order: p,
            });
        }

        let (stats, lambda_factors, lambda_logdet) = match &prior.scale {
            PriorScale::Dense(l) => {
                if l.nrows() != p || l.ncols() != p {
                    return Err(Error::ShapeMismatch(format!(
                        "prior scale is {}x{}, expected order {}",
                        l.nrows(),
                        l.ncols(),
                        p
                    )));
                }
                let aug = SufficientStats::new(dims.clone(), stats.matrix() + l)?;
                // a rank-deficient Λ has no finite log-determinant; reported
                // values then drop that constant
                let logdet = SpdMatrix::new(l.clone()).ok().map(|m| m.logdet());
                (aug, None, logdet)
            }
            PriorScale::Factors(f) => {
                if f.dims() != &dims {
                    return Err(Error::ShapeMismatch(
                        "prior factor dims differ from data dims".into(),
                    ));
                }
                (stats.clone(), Some(f.matrices()), Some(f.kron_logdet()))
            }
        };

        let half = T::of(0.5);
        let ln2 = T::of(std::f64::consts::LN_2);
        let mut constant = -(nf * pf * half) * T::pi().ln()
            - prior.nu * pf * half * ln2
            - log_multigamma(p, prior.nu * half)?;
        let prior_logdet_omitted = lambda_logdet.is_none();
        if let Some(ld) = lambda_logdet {
            constant += prior.nu * half * ld;
        }

        Ok(Self {
            dims,
            n,
            prior_nu: prior.nu,
            stats,
            lambda_factors,
            constant,
            prior_logdet_omitted,
        })
    }

    pub fn dims(&self) -> &FactorDims {
        &self.dims
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// True when the prior scale was rank-deficient and its log-determinant
    /// constant is missing from reported values.
    pub fn prior_logdet_omitted(&self) -> bool {
        self.prior_logdet_omitted
    }

    /// Runs the per-mode contractions at the current factors.
    pub fn contractions(&self, factors: &FactorSet<T>) -> Result<TraceWorkspace<T>> {
        if factors.dims() != &self.dims {
            return Err(Error::ShapeMismatch(
                "factor dims differ from problem dims".into(),
            ));
        }
        let inverses = factors.inverses();
        let d = self.dims.n_modes();
        // per-mode contractions are independent; run them in parallel
        let t_ops: Vec<DMatrix<T>> = (1..=d)
            .into_par_iter()
            .map(|k| {
                let mut t = self.stats.partial_trace(&inverses, k)?;
                if let Some(lf) = &self.lambda_factors {
                    // T⁽ᵏ⁾(S+⊗Λ_j) = T⁽ᵏ⁾(S) + Λ_k·∏_{j≠k} tr(Λ_j A_j⁻¹)
                    let mut w = T::one();
                    for j in 0..d {
                        if j + 1 != k {
                            w *= trace_of_product(&lf[j], &inverses[j]);
                        }
                    }
                    t += &lf[k - 1] * w;
                }
                Ok(t)
            })
            .collect::<Result<_>>()?;
        let data_trace = trace_of_product(&inverses[0], &t_ops[0]);
        Ok(TraceWorkspace {
            t_ops,
            data_trace,
            inverses,
        })
    }

    /// Data trace `τ = tr([⊗A_i⁻¹](S+Λ))` through a single partial-trace
    /// contraction. Any mode yields the same τ; the last mode is used
    /// because its contraction eliminates mode 1 first, which walks the
    /// stats matrix in its longest contiguous runs. This is what step
    /// guards call to price a candidate without the full per-mode set.
    pub fn data_trace(&self, factors: &FactorSet<T>) -> Result<T> {
        if factors.dims() != &self.dims {
            return Err(Error::ShapeMismatch(
                "factor dims differ from problem dims".into(),
            ));
        }
        let inverses = factors.inverses();
        let d = self.dims.n_modes();
        let mut t = self.stats.partial_trace(&inverses, d)?;
        if let Some(lf) = &self.lambda_factors {
            let mut w = T::one();
            for j in 0..d - 1 {
                w *= trace_of_product(&lf[j], &inverses[j]);
            }
            t += &lf[d - 1] * w;
        }
        Ok(trace_of_product(&inverses[d - 1], &t))
    }

    /// Bound value at a state given its data trace.
    pub fn value_given_trace(
        &self,
        state: &JointState<T>,
        tau: T,
        orthogonalized: bool,
    ) -> Result<T> {
        let p = self.dims.total();
        let pf = T::of_usize(p);
        let nf = T::of_usize(self.n);
        let half = T::of(0.5);
        let nu = self.prior_nu;
        let nu_v = state.nu_v();
        let logdet_sum = if orthogonalized {
            T::of_usize(self.dims.comp_product(1)) * state.factors().factor(1).logdet()
        } else {
            state.factors().kron_logdet()
        };
        let value = self.constant + log_multigamma(p, nu_v * half)? + nu_v * pf * half
            - nu_v * half * tau
            - (nf + nu) * half * logdet_sum
            - (nu_v - nu - nf) * half * digamma_sum(p, nu_v)?;
        if !value.is_finite() {
            return Err(Error::NonFinite("joint ELBO value".into()));
        }
        Ok(value)
    }

    /// Assembles value and gradients from a contraction workspace. With
    /// `orthogonalized` set the log-determinant sum collapses to
    /// `d_{-1}·log|A₁|`, which coincides with the full sum whenever the
    /// `|A_i|=1 (i>1)` constraint holds.
    pub fn evaluate_with(
        &self,
        state: &JointState<T>,
        ws: &TraceWorkspace<T>,
        orthogonalized: bool,
    ) -> Result<ElboValue<T>> {
        let p = self.dims.total();
        let pf = T::of_usize(p);
        let nf = T::of_usize(self.n);
        let half = T::of(0.5);
        let nu = self.prior_nu;
        let nu_v = state.nu_v();
        let tau = ws.data_trace;
        let value = self.value_given_trace(state, tau, orthogonalized)?;

        // ∇_{A_i} = (ν_v/2)·A_i⁻¹T⁽ⁱ⁾A_i⁻¹ − ((n+ν)/2)·d_{-i}·A_i⁻¹
        let mut grad_factors = Vec::with_capacity(self.dims.n_modes());
        for i in 0..self.dims.n_modes() {
            let inv = &ws.inverses[i];
            let core = inv * &ws.t_ops[i] * inv;
            let dcomp = T::of_usize(self.dims.comp_product(i + 1));
            let g = core * (nu_v * half) - inv * ((nf + nu) * half * dcomp);
            grad_factors.push(symmetrize(&g));
        }

        // ∇_{ν_v} = p/2 − τ/2 − ((ν_v−ν−n)/4)·Σψ′((ν_v−p+i)/2), then the
        // chain rule through ν_v = exp(z) + p + 1
        let tri = trigamma_sum(p, nu_v)?;
        let grad_nu = pf * half - tau * half - (nu_v - nu - nf) * T::of(0.25) * tri;
        let grad_z = grad_nu * state.z().exp();

        ElboValue {
            value,
            grad_factors,
            grad_z: vec![grad_z],
            trace_workspace: ws.t_ops[0].clone(),
            data_trace: tau,
        }
        .check_finite("joint ELBO")
    }

    pub fn evaluate(&self, state: &JointState<T>, orthogonalized: bool) -> Result<ElboValue<T>> {
        let ws = self.contractions(state.factors())?;
        self.evaluate_with(state, &ws, orthogonalized)
    }
}

/// Joint bound at a state: builds the problem and evaluates once. Loops
/// should build a [`JointProblem`] instead so `S+Λ` is formed only once.
pub fn elbo_joint<T: Real>(
    state: &JointState<T>,
    stats: &SufficientStats<T>,
    n: usize,
    orthogonalized: bool,
) -> Result<ElboValue<T>> {
    JointProblem::new(stats, n, state.prior())?.evaluate(state, orthogonalized)
}

/// Euclidean gradients of the joint bound: per-mode `∇_{A_i}` and `∇_z`.
pub fn grad_joint<T: Real>(
    state: &JointState<T>,
    stats: &SufficientStats<T>,
    n: usize,
) -> Result<(Vec<DMatrix<T>>, T)> {
    let ev = elbo_joint(state, stats, n, false)?;
    Ok((ev.grad_factors, ev.grad_z[0]))
}

/// Precomputed mean-field problem data.
#[derive(Debug, Clone)]
pub struct MeanFieldProblem<T: Real> {
    dims: FactorDims,
    n: usize,
    stats: SufficientStats<T>,
}

impl<T: Real> MeanFieldProblem<T> {
    pub fn new(stats: &SufficientStats<T>, n: usize) -> Self {
        Self {
            dims: stats.dims().clone(),
            n,
            stats: stats.clone(),
        }
    }

    pub fn dims(&self) -> &FactorDims {
        &self.dims
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn contractions(&self, factors: &FactorSet<T>) -> Result<TraceWorkspace<T>> {
        if factors.dims() != &self.dims {
            return Err(Error::ShapeMismatch(
                "factor dims differ from problem dims".into(),
            ));
        }
        let inverses = factors.inverses();
        let d = self.dims.n_modes();
        let t_ops: Vec<DMatrix<T>> = (1..=d)
            .into_par_iter()
            .map(|k| self.stats.partial_trace(&inverses, k))
            .collect::<Result<_>>()?;
        let data_trace = trace_of_product(&inverses[0], &t_ops[0]);
        Ok(TraceWorkspace {
            t_ops,
            data_trace,
            inverses,
        })
    }

    /// `τ_S = tr([⊗A_i⁻¹]S)` through one cheapest-mode contraction.
    pub fn data_trace(&self, factors: &FactorSet<T>) -> Result<T> {
        if factors.dims() != &self.dims {
            return Err(Error::ShapeMismatch(
                "factor dims differ from problem dims".into(),
            ));
        }
        let inverses = factors.inverses();
        let d = self.dims.n_modes();
        let t = self.stats.partial_trace(&inverses, d)?;
        Ok(trace_of_product(&inverses[d - 1], &t))
    }

    /// Bound value at a state given its data trace.
    pub fn value_given_trace(&self, state: &MeanFieldState<T>, tau: T) -> Result<T> {
        let d = self.dims.n_modes();
        let p = self.dims.total();
        let half = T::of(0.5);
        let ln2 = T::of(std::f64::consts::LN_2);
        let nf = T::of_usize(self.n);
        let nus = state.nus();
        let nu_prod: T = nus.iter().fold(T::one(), |a, &b| a * b);
        let ln_2pi = T::of(std::f64::consts::TAU).ln();
        let mut value = -(nf * T::of_usize(p) * half) * ln_2pi - nu_prod * half * tau;
        for i in 1..=d {
            let di = self.dims.dim(i);
            let dif = T::of_usize(di);
            let dcomp = T::of_usize(self.dims.comp_product(i));
            let nu_i = state.prior_nu(i);
            let s_i = state.prior_scale(i);
            let nv = nus[i - 1];
            let a = state.factors().factor(i);
            let inv_trace = a
                .chol_lower()
                .solve_lower_triangular(&DMatrix::identity(di, di))
                .map(|x| crate::linalg::frob_norm_sq(&x))
                .ok_or_else(|| Error::NotSpd("factor Cholesky".into()))?;
            let logdet = a.logdet();
            let psi = digamma_sum(di, nv)?;
            let ell = logdet - dif * ln2 - psi;
            let coeff = (nv - nu_i - nf * dcomp) * half;
            value += nu_i * dif * half * s_i.ln()
                - nu_i * dif * half * ln2
                - log_multigamma(di, nu_i * half)?
                - nv * s_i * half * inv_trace
                - nv * half * logdet
                + nv * dif * half * ln2
                + log_multigamma(di, nv * half)?
                + nv * dif * half
                + coeff * ell;
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("mean-field ELBO value".into()));
        }
        Ok(value)
    }

    pub fn evaluate_with(
        &self,
        state: &MeanFieldState<T>,
        ws: &TraceWorkspace<T>,
    ) -> Result<ElboValue<T>> {
        let d = self.dims.n_modes();
        let half = T::of(0.5);
        let nf = T::of_usize(self.n);
        let tau = ws.data_trace;
        let nus = state.nus();
        let nu_prod: T = nus.iter().fold(T::one(), |a, &b| a * b);
        let value = self.value_given_trace(state, tau)?;

        let mut grad_factors = Vec::with_capacity(d);
        let mut grad_z = Vec::with_capacity(d);
        for i in 1..=d {
            let di = self.dims.dim(i);
            let dif = T::of_usize(di);
            let dcomp = T::of_usize(self.dims.comp_product(i));
            let nu_i = state.prior_nu(i);
            let s_i = state.prior_scale(i);
            let nv = nus[i - 1];
            let inv = &ws.inverses[i - 1];
            let inv_trace = inv.trace();
            let coeff = (nv - nu_i - nf * dcomp) * half;

            // ∇_{A_i} = (∏ν/2)·A⁻¹T⁽ⁱ⁾A⁻¹ + (ν_{v_i}s_i/2)·A⁻² − ((ν_i+n·d_{-i})/2)·A⁻¹
            let core = inv * &ws.t_ops[i - 1] * inv;
            let g = core * (nu_prod * half) + (inv * inv) * (nv * s_i * half)
                - inv * ((nu_i + nf * dcomp) * half);
            grad_factors.push(symmetrize(&g));

            // ∇_{ν_{v_i}} = d_i/2 − (∏_{j≠i}ν_j/2)·τ − (s_i/2)·tr(A⁻¹)
            //              − ((ν_{v_i}−ν_i−n·d_{-i})/4)·Σψ′
            let nu_rest = nu_prod / nv;
            let tri = trigamma_sum(di, nv)?;
            let grad_nu =
                dif * half - nu_rest * half * tau - s_i * half * inv_trace - coeff * half * tri;
            grad_z.push(grad_nu * state.z()[i - 1].exp());
        }

        ElboValue {
            value,
            grad_factors,
            grad_z,
            trace_workspace: ws.t_ops[0].clone(),
            data_trace: tau,
        }
        .check_finite("mean-field ELBO")
    }

    pub fn evaluate(&self, state: &MeanFieldState<T>) -> Result<ElboValue<T>> {
        let ws = self.contractions(state.factors())?;
        self.evaluate_with(state, &ws)
    }
}

/// Mean-field bound at a state.
pub fn elbo_mean_field<T: Real>(
    state: &MeanFieldState<T>,
    stats: &SufficientStats<T>,
    n: usize,
) -> Result<ElboValue<T>> {
    MeanFieldProblem::new(stats, n).evaluate(state)
}

/// Euclidean gradients of the mean-field bound.
pub fn grad_mean_field<T: Real>(
    state: &MeanFieldState<T>,
    stats: &SufficientStats<T>,
    n: usize,
) -> Result<(Vec<DMatrix<T>>, Vec<T>)> {
    let ev = elbo_mean_field(state, stats, n)?;
    Ok((ev.grad_factors, ev.grad_z))
}
