//! Riemannian gradient ascent for the joint and mean-field bounds:
//! per-iteration dof update in `z`-space followed by per-mode geodesic
//! steps, with convergence monitoring, an optional backtracking guard, and
//! run traces for the experiment harness.
//!
//! Iteration order follows the joint multiway scheme: the contraction
//! workspace of the current factors feeds first the dof gradient (the dof
//! is updated immediately), then the per-mode Euclidean gradients at the
//! updated dof, which are converted through the metric and applied through
//! the exponential map with determinant renormalization for modes `i > 1`
//! under the orthogonalized pullback. The mean-field variant steps every
//! per-mode dof simultaneously and uses the plain product-manifold rule
//! `gᵢᴿ = A_i g_i A_i` with no normalization step.

use nalgebra::DMatrix;

use crate::elbo::{JointProblem, JointState, MeanFieldProblem, MeanFieldState};
use crate::error::{Error, Result};
use crate::geometry::{geodesic_step, riemannian_grad, MetricKind};
use crate::kron::SufficientStats;
use crate::linalg::{frob_inner, frob_norm_sq, trace_of_product};
use crate::scalar::Real;
use crate::spd::FactorSet;

/// Step sizes: one global `ε` shared by scale matrices and degrees of
/// freedom, or split values for the two groups.
#[derive(Debug, Clone, Copy)]
pub enum StepSizes<T> {
    Global(T),
    Split { factors: T, dof: T },
}

impl<T: Real> StepSizes<T> {
    pub fn factor_step(&self) -> T {
        match *self {
            StepSizes::Global(e) => e,
            StepSizes::Split { factors, .. } => factors,
        }
    }

    pub fn dof_step(&self) -> T {
        match *self {
            StepSizes::Global(e) => e,
            StepSizes::Split { dof, .. } => dof,
        }
    }
}

/// Plateau and gradient thresholds for [`check_convergence`].
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceCriteria<T> {
    /// Relative ELBO change over the window that counts as a plateau.
    pub elbo_rel_tol: T,
    /// Riemannian gradient norm below which a plateau is a convergence.
    pub grad_norm_tol: T,
    /// Number of recorded points the plateau is measured over.
    pub window: usize,
}

impl<T: Real> Default for ConvergenceCriteria<T> {
    fn default() -> Self {
        Self {
            elbo_rel_tol: T::of(1e-8),
            grad_norm_tol: T::of(1e-6),
            window: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig<T> {
    pub metric: MetricKind,
    pub step: StepSizes<T>,
    pub max_iters: usize,
    pub convergence: ConvergenceCriteria<T>,
    /// Record every k-th iteration (the final one is always recorded).
    pub record_every: usize,
    /// Halve the step on an ELBO decrease, up to [`Self::max_halvings`]
    /// times. On by default; switched off to reproduce the fixed-step
    /// instabilities of the reference experiments.
    pub backtracking: bool,
    pub max_halvings: usize,
    /// Keep per-row variational-mean snapshots (factor form) in the trace.
    pub record_means: bool,
    /// Consumed by callers that derive data or initial states; the fit
    /// loops themselves are deterministic.
    pub seed: u64,
}

impl<T: Real> OptimizerConfig<T> {
    pub fn new(metric: MetricKind, step: StepSizes<T>, max_iters: usize) -> Self {
        Self {
            metric,
            step,
            max_iters,
            convergence: ConvergenceCriteria::default(),
            record_every: 1,
            backtracking: true,
            max_halvings: 30,
            record_means: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step.factor_step() > T::zero()) || !(self.step.dof_step() > T::zero()) {
            return Err(Error::InvalidConfig("step sizes must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidConfig(
                "record_every must be at least 1".into(),
            ));
        }
        if !(self.convergence.elbo_rel_tol > T::zero())
            || !(self.convergence.grad_norm_tol > T::zero())
            || self.convergence.window < 2
        {
            return Err(Error::InvalidConfig(
                "convergence tolerances must be positive with window ≥ 2".into(),
            ));
        }
        if self.metric == MetricKind::PullbackNaive {
            return Err(Error::InvalidConfig(
                "naive pullback metric is degenerate; use the orthogonalized pullback".into(),
            ));
        }
        Ok(())
    }
}

/// Terminal state of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    Running,
    Stalled,
    Diverged,
}

/// One recorded iteration.
#[derive(Debug, Clone)]
pub struct TraceRow<T: Real> {
    pub iteration: usize,
    pub elbo: T,
    pub grad_norm: T,
    /// Per-mode `log|A_i|`.
    pub logdets: Vec<T>,
    /// `ν_v` (joint: one entry) or `ν_{v_i}` (mean-field: one per mode).
    pub dof: Vec<T>,
    /// `‖E_q[Σ] − Σ*‖_F²` against the supplied ground truth, when given.
    pub distance_to_truth: Option<T>,
    /// Variational mean in factor form, when snapshots are enabled.
    pub mean: Option<FactorSet<T>>,
}

/// Recorded optimization run.
#[derive(Debug, Clone)]
pub struct Trace<T: Real> {
    rows: Vec<TraceRow<T>>,
    pub status: RunStatus,
}

impl<T: Real> Trace<T> {
    pub fn new() -> Self {
        Self {
            rows: Vec::new(),
            status: RunStatus::Running,
        }
    }

    pub fn rows(&self) -> &[TraceRow<T>] {
        &self.rows
    }

    pub fn push(&mut self, row: TraceRow<T>) {
        debug_assert!(self
            .rows
            .last()
            .map_or(true, |r| r.iteration < row.iteration));
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&TraceRow<T>> {
        self.rows.last()
    }

    /// Relative ELBO spread over the last `window` recorded points, when
    /// that many exist.
    pub fn plateau_measure(&self, window: usize) -> Option<T> {
        if self.rows.len() < window {
            return None;
        }
        let tail = &self.rows[self.rows.len() - window..];
        let mut lo = tail[0].elbo;
        let mut hi = tail[0].elbo;
        for r in tail {
            if r.elbo < lo {
                lo = r.elbo;
            }
            if r.elbo > hi {
                hi = r.elbo;
            }
        }
        let scale = hi.abs().max(T::one());
        Some((hi - lo) / scale)
    }
}

impl<T: Real> Default for Trace<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Classifies a trace: `Diverged` on any non-finite entry; `Converged` when
/// the relative ELBO change over the window is at most `elbo_rel_tol` and
/// the latest gradient norm is at most `grad_norm_tol`; `Stalled` when only
/// the plateau holds; `Running` otherwise.
pub fn check_convergence<T: Real>(trace: &Trace<T>, cfg: &OptimizerConfig<T>) -> RunStatus {
    if trace.rows().is_empty() {
        return RunStatus::Running;
    }
    if trace
        .rows()
        .iter()
        .any(|r| !r.elbo.is_finite() || !r.grad_norm.is_finite())
    {
        return RunStatus::Diverged;
    }
    let Some(spread) = trace.plateau_measure(cfg.convergence.window) else {
        return RunStatus::Running;
    };
    if spread <= cfg.convergence.elbo_rel_tol {
        let grad = trace.last().expect("non-empty").grad_norm;
        if grad <= cfg.convergence.grad_norm_tol {
            RunStatus::Converged
        } else {
            RunStatus::Stalled
        }
    } else {
        RunStatus::Running
    }
}

/// Ground truth a run can be measured against.
#[derive(Debug, Clone)]
pub enum GroundTruth<T: Real> {
    Factors(FactorSet<T>),
    Dense(DMatrix<T>),
}

/// `‖⊗A_i − Σ*‖_F²` for a variational mean in factor form, computed
/// factor-wise against a separable truth (never materializing either
/// Kronecker product) and densely otherwise.
pub fn mean_distance_sq<T: Real>(mean: &FactorSet<T>, truth: &GroundTruth<T>) -> Result<T> {
    match truth {
        GroundTruth::Factors(t) => {
            if t.dims() != mean.dims() {
                return Err(Error::ShapeMismatch(
                    "truth dims differ from state dims".into(),
                ));
            }
            let mut mm = T::one();
            let mut tt = T::one();
            let mut mt = T::one();
            for i in 1..=mean.n_modes() {
                let a = mean.factor(i).values();
                let b = t.factor(i).values();
                mm *= frob_norm_sq(a);
                tt *= frob_norm_sq(b);
                mt *= frob_inner(a, b);
            }
            Ok(mm + tt - (mt + mt))
        }
        GroundTruth::Dense(d) => {
            if d.nrows() != mean.dims().total() {
                return Err(Error::ShapeMismatch(
                    "truth order differs from state order".into(),
                ));
            }
            let diff = mean.dense() - d;
            Ok(frob_norm_sq(&diff))
        }
    }
}

/// Squared Frobenius distance `‖E_q[Σ] − Σ*‖_F²` of the joint variational
/// mean `⊗A_i/(ν_v − p − 1)` to a ground truth.
pub fn distance_to_truth_joint<T: Real>(
    state: &JointState<T>,
    truth: &GroundTruth<T>,
) -> Result<T> {
    mean_distance_sq(&state.mean_factors()?, truth)
}

/// Mean-field counterpart with `E_q[Σ] = ⊗[A_i/(ν_{v_i} − d_i − 1)]`.
pub fn distance_to_truth_mean_field<T: Real>(
    state: &MeanFieldState<T>,
    truth: &GroundTruth<T>,
) -> Result<T> {
    mean_distance_sq(&state.mean_factors()?, truth)
}

/// Riemannian gradient norm through the duality pairing
/// `‖∇ᴿ‖² = Σ_i ⟨G_i, V_i⟩_F + Σ g_z²` (the projection is self-adjoint, so
/// the pairing equals the metric norm of the projected tangent).
fn grad_norm<T: Real>(
    euclid: &[DMatrix<T>],
    tangent: &crate::geometry::TangentVector<T>,
    grad_z: &[T],
) -> T {
    let mut acc = T::zero();
    for (g, v) in euclid.iter().zip(tangent.components()) {
        acc += trace_of_product(g, v);
    }
    for &gz in grad_z {
        acc += gz * gz;
    }
    acc.max(T::zero()).sqrt()
}

struct StepOutcome<S, T: Real> {
    state: S,
    value: T,
    grad_norm: T,
    accepted_scale: T,
}

/// Fits the joint approximation by Riemannian ascent. Returns the final
/// state and the recorded trace; numeric failures abort with the last good
/// state and a `Diverged` status rather than an error.
pub fn fit_joint<T: Real>(
    stats: &SufficientStats<T>,
    n: usize,
    init: &JointState<T>,
    cfg: &OptimizerConfig<T>,
    truth: Option<&GroundTruth<T>>,
) -> Result<(JointState<T>, Trace<T>)> {
    cfg.validate()?;
    let orthogonalized = cfg.metric == MetricKind::PullbackOrthogonalized;
    let problem = JointProblem::new(stats, n, init.prior())?;
    let mut state = if orthogonalized {
        init.rebalanced()?
    } else {
        init.clone()
    };

    let mut ws = problem.contractions(state.factors())?;
    let mut eval = problem.evaluate_with(&state, &ws, orthogonalized)?;
    let mut current_value = eval.value;
    let mut step_scale = T::one();
    let mut trace = Trace::new();

    for iter in 1..=cfg.max_iters {
        // candidates are priced through a single-mode data trace; the full
        // per-mode contraction set is only computed for the accepted state
        let attempt = |scale: T| -> Result<(JointState<T>, T, T)> {
            // dof first: z step from the current contractions, factors next
            // at the updated dof
            let z_new = state.z() + cfg.step.dof_step() * scale * eval.grad_z[0];
            let state_z = state.with_z(z_new);
            let ev_z = problem.evaluate_with(&state_z, &ws, orthogonalized)?;
            let tangent = riemannian_grad(state_z.factors(), &ev_z.grad_factors, cfg.metric)?;
            let gn = grad_norm(&ev_z.grad_factors, &tangent, &ev_z.grad_z);
            let factors = geodesic_step(
                state_z.factors(),
                &tangent,
                cfg.step.factor_step() * scale,
                cfg.metric,
            )?;
            let candidate = state_z.with_factors(factors);
            let tau = problem.data_trace(candidate.factors())?;
            let value = problem.value_given_trace(&candidate, tau, orthogonalized)?;
            Ok((candidate, value, gn))
        };
        let outcome = run_guarded(cfg, current_value, step_scale, attempt);
        let Some(out) = handle_outcome(outcome, &mut trace) else {
            // numeric failure or exhausted halvings: keep the last good state
            return Ok((state, trace));
        };
        state = out.state;
        current_value = out.value;
        step_scale = out.accepted_scale * T::of(2.0);
        ws = problem.contractions(state.factors())?;
        eval = problem.evaluate_with(&state, &ws, orthogonalized)?;

        record_row(
            &mut trace,
            cfg,
            iter,
            current_value,
            out.grad_norm,
            state
                .factors()
                .factors()
                .iter()
                .map(|f| f.logdet())
                .collect(),
            vec![state.nu_v()],
            truth,
            || state.mean_factors(),
        )?;

        trace.status = check_convergence(&trace, cfg);
        if trace.status == RunStatus::Converged {
            break;
        }
    }
    if trace.status == RunStatus::Running {
        trace.status = check_convergence(&trace, cfg);
    }
    Ok((state, trace))
}

/// Fits the mean-field approximation: product-manifold conversion
/// `gᵢᴿ = A_i g_i A_i`, simultaneous per-mode dof updates, no
/// normalization. The metric in `cfg` other than `PullbackNaive` is
/// accepted and ignored.
pub fn fit_mean_field<T: Real>(
    stats: &SufficientStats<T>,
    n: usize,
    init: &MeanFieldState<T>,
    cfg: &OptimizerConfig<T>,
    truth: Option<&GroundTruth<T>>,
) -> Result<(MeanFieldState<T>, Trace<T>)> {
    cfg.validate()?;
    let problem = MeanFieldProblem::new(stats, n);
    let mut state = init.clone();
    let mut ws = problem.contractions(state.factors())?;
    let mut eval = problem.evaluate_with(&state, &ws)?;
    let mut current_value = eval.value;
    let mut step_scale = T::one();
    let mut trace = Trace::new();

    for iter in 1..=cfg.max_iters {
        let attempt = |scale: T| -> Result<(MeanFieldState<T>, T, T)> {
            let z_new: Vec<T> = state
                .z()
                .iter()
                .zip(&eval.grad_z)
                .map(|(&z, &g)| z + cfg.step.dof_step() * scale * g)
                .collect();
            let state_z = state.with_z(z_new);
            let ev_z = problem.evaluate_with(&state_z, &ws)?;
            let tangent = riemannian_grad(
                state_z.factors(),
                &ev_z.grad_factors,
                MetricKind::ProductManifold,
            )?;
            let gn = grad_norm(&ev_z.grad_factors, &tangent, &ev_z.grad_z);
            let factors = geodesic_step(
                state_z.factors(),
                &tangent,
                cfg.step.factor_step() * scale,
                MetricKind::ProductManifold,
            )?;
            let candidate = state_z.with_factors(factors);
            let tau = problem.data_trace(candidate.factors())?;
            let value = problem.value_given_trace(&candidate, tau)?;
            Ok((candidate, value, gn))
        };
        let outcome = run_guarded(cfg, current_value, step_scale, attempt);
        let Some(out) = handle_outcome(outcome, &mut trace) else {
            return Ok((state, trace));
        };
        state = out.state;
        current_value = out.value;
        step_scale = out.accepted_scale * T::of(2.0);
        ws = problem.contractions(state.factors())?;
        eval = problem.evaluate_with(&state, &ws)?;

        record_row(
            &mut trace,
            cfg,
            iter,
            current_value,
            out.grad_norm,
            state
                .factors()
                .factors()
                .iter()
                .map(|f| f.logdet())
                .collect(),
            state.nus(),
            truth,
            || state.mean_factors(),
        )?;

        trace.status = check_convergence(&trace, cfg);
        if trace.status == RunStatus::Converged {
            break;
        }
    }
    if trace.status == RunStatus::Running {
        trace.status = check_convergence(&trace, cfg);
    }
    Ok((state, trace))
}

enum GuardedOutcome<S, T: Real> {
    Accepted(StepOutcome<S, T>),
    NumericFailure,
    HalvingsExhausted,
}

/// Runs one iteration attempt, optionally halving the step on an ELBO
/// decrease (beyond round-off) or a numeric failure. The search starts at
/// `start_scale` (warm-started by the caller from the previous accepted
/// scale) and never exceeds one.
fn run_guarded<S, T: Real>(
    cfg: &OptimizerConfig<T>,
    current_value: T,
    start_scale: T,
    attempt: impl Fn(T) -> Result<(S, T, T)>,
) -> GuardedOutcome<S, T> {
    let decrease_tol = T::of(1e-9) * current_value.abs().max(T::one());
    let mut scale = if cfg.backtracking {
        start_scale.min(T::one())
    } else {
        T::one()
    };
    let rounds = if cfg.backtracking {
        cfg.max_halvings + 1
    } else {
        1
    };
    for round in 0..rounds {
        match attempt(scale) {
            Ok((state, value, gn)) => {
                let decreased = value < current_value - decrease_tol;
                if !decreased || !cfg.backtracking {
                    return GuardedOutcome::Accepted(StepOutcome {
                        state,
                        value,
                        grad_norm: gn,
                        accepted_scale: scale,
                    });
                }
            }
            Err(Error::NonFinite(_)) | Err(Error::NotSpd(_)) => {
                if !cfg.backtracking {
                    return GuardedOutcome::NumericFailure;
                }
            }
            Err(_) => return GuardedOutcome::NumericFailure,
        }
        if round + 1 < rounds {
            scale *= T::of(0.5);
        }
    }
    GuardedOutcome::HalvingsExhausted
}

fn handle_outcome<S, T: Real>(
    outcome: GuardedOutcome<S, T>,
    trace: &mut Trace<T>,
) -> Option<StepOutcome<S, T>> {
    match outcome {
        GuardedOutcome::Accepted(out) => Some(out),
        GuardedOutcome::NumericFailure => {
            trace.status = RunStatus::Diverged;
            None
        }
        GuardedOutcome::HalvingsExhausted => {
            trace.status = RunStatus::Stalled;
            None
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn record_row<T: Real>(
    trace: &mut Trace<T>,
    cfg: &OptimizerConfig<T>,
    iter: usize,
    elbo: T,
    grad_norm: T,
    logdets: Vec<T>,
    dof: Vec<T>,
    truth: Option<&GroundTruth<T>>,
    mean: impl Fn() -> Result<FactorSet<T>>,
) -> Result<()> {
    if iter % cfg.record_every != 0 && iter != cfg.max_iters {
        return Ok(());
    }
    let mean_factors = if truth.is_some() || cfg.record_means {
        Some(mean()?)
    } else {
        None
    };
    let distance = match (truth, &mean_factors) {
        (Some(t), Some(m)) => Some(mean_distance_sq(m, t)?),
        _ => None,
    };
    trace.push(TraceRow {
        iteration: iter,
        elbo,
        grad_norm,
        logdets,
        dof,
        distance_to_truth: distance,
        mean: if cfg.record_means { mean_factors } else { None },
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elbo::{JointPrior, PriorScale};
    use crate::kron::FactorDims;
    use crate::sampling::{sample_tensor_normal, seeded_rng};
    use crate::testing::{random_spd, rng};

    fn small_problem(seed: u64) -> (SufficientStats<f64>, usize, JointState<f64>, FactorSet<f64>) {
        let mut r = rng(seed);
        let dims = FactorDims::new(&[2, 2]).unwrap();
        let truth = FactorSet::from_matrices(vec![
            random_spd::<f64>(2, &mut r),
            random_spd::<f64>(2, &mut r),
        ])
        .unwrap();
        let n = 40;
        let (_, stats) = sample_tensor_normal(&truth, n, &mut r).unwrap();
        let prior = JointPrior {
            nu: (dims.total() + 2) as f64,
            scale: PriorScale::Factors(FactorSet::identity(&dims)),
        };
        let gamma = stats.matrix().trace() / n as f64;
        let init = JointState::random_init(&dims, prior, gamma, &mut r).unwrap();
        (stats, n, init, truth)
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        let mut cfg =
            OptimizerConfig::new(MetricKind::ProductManifold, StepSizes::Global(0.01), 10);
        assert!(cfg.validate().is_ok());
        cfg.metric = MetricKind::PullbackNaive;
        assert!(cfg.validate().is_err());
        cfg.metric = MetricKind::ProductManifold;
        cfg.step = StepSizes::Global(0.0);
        assert!(cfg.validate().is_err());
        cfg.step = StepSizes::Global(0.01);
        cfg.max_iters = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn prior_only_run_recovers_the_prior() {
        // n = 0: the optimum is q = prior, so the fit should drive the
        // gradient to zero and ⊗A to ⊗Λ.
        let mut r = rng(71);
        let dims = FactorDims::new(&[2, 2]).unwrap();
        let lambda = FactorSet::from_matrices(vec![
            random_spd::<f64>(2, &mut r),
            random_spd::<f64>(2, &mut r),
        ])
        .unwrap();
        let prior = JointPrior {
            nu: (dims.total() + 2) as f64,
            scale: PriorScale::Factors(lambda.clone()),
        };
        let stats = SufficientStats::new(dims.clone(), DMatrix::zeros(4, 4)).unwrap();
        let init = JointState::random_init(&dims, prior, 1.0, &mut seeded_rng(5)).unwrap();
        let mut cfg = OptimizerConfig::new(
            MetricKind::PullbackOrthogonalized,
            StepSizes::Split {
                factors: 0.2,
                dof: 0.2,
            },
            4000,
        );
        cfg.record_every = 10;
        let (fitted, trace) = fit_joint(&stats, 0, &init, &cfg, None).unwrap();
        assert_eq!(
            trace.status,
            RunStatus::Converged,
            "status {:?}",
            trace.status
        );
        assert!(trace.last().unwrap().grad_norm <= 1e-6);
        let dist = mean_distance_sq(fitted.factors(), &GroundTruth::Factors(lambda)).unwrap();
        assert!(dist < 1e-8, "⊗A missed ⊗Λ by {dist}");
        assert!((fitted.nu_v() - 6.0).abs() < 1e-3);
    }

    #[test]
    fn tiny_step_is_an_ascent_direction() {
        for seed in 0..50 {
            let (stats, n, init, _) = small_problem(100 + seed);
            let problem = JointProblem::new(&stats, n, init.prior()).unwrap();
            let before = problem.evaluate(&init, false).unwrap().value;
            let mut cfg =
                OptimizerConfig::new(MetricKind::ProductManifold, StepSizes::Global(1e-12), 1);
            cfg.backtracking = false;
            let (after_state, _) = fit_joint(&stats, n, &init, &cfg, None).unwrap();
            let after = problem.evaluate(&after_state, false).unwrap().value;
            assert!(
                after >= before - 1e-9 * before.abs(),
                "seed {seed}: {before} -> {after}"
            );
        }
    }

    #[test]
    fn backtracking_keeps_recorded_elbo_monotone() {
        let (stats, n, init, _) = small_problem(7);
        let cfg = OptimizerConfig::new(
            MetricKind::PullbackOrthogonalized,
            StepSizes::Global(0.5), // deliberately aggressive
            300,
        );
        let (_, trace) = fit_joint(&stats, n, &init, &cfg, None).unwrap();
        let rows = trace.rows();
        assert!(!rows.is_empty());
        for w in rows.windows(2) {
            let tol = 1e-9 * w[0].elbo.abs().max(1.0);
            assert!(
                w[1].elbo >= w[0].elbo - tol,
                "decrease at iter {}: {} -> {}",
                w[1].iteration,
                w[0].elbo,
                w[1].elbo
            );
        }
    }

    #[test]
    fn unguarded_divergence_is_reported_not_crashed() {
        let (stats, n, init, _) = small_problem(9);
        let mut cfg = OptimizerConfig::new(MetricKind::ProductManifold, StepSizes::Global(1e3), 50);
        cfg.backtracking = false;
        let result = fit_joint(&stats, n, &init, &cfg, None);
        let (_, trace) = result.expect("divergence must not be an Err");
        assert!(
            trace.status == RunStatus::Diverged || trace.status == RunStatus::Stalled,
            "status {:?}",
            trace.status
        );
    }

    #[test]
    fn seeded_runs_are_identical() {
        let (stats, n, init, truth) = small_problem(11);
        let cfg = OptimizerConfig::new(
            MetricKind::PullbackOrthogonalized,
            StepSizes::Global(0.05),
            40,
        );
        let truth = GroundTruth::Factors(truth);
        let (s1, t1) = fit_joint(&stats, n, &init, &cfg, Some(&truth)).unwrap();
        let (s2, t2) = fit_joint(&stats, n, &init, &cfg, Some(&truth)).unwrap();
        assert_eq!(s1.z(), s2.z());
        for i in 1..=2 {
            assert_eq!(
                s1.factors().factor(i).values(),
                s2.factors().factor(i).values()
            );
        }
        for (a, b) in t1.rows().iter().zip(t2.rows()) {
            assert_eq!(a.elbo, b.elbo);
            assert_eq!(a.distance_to_truth, b.distance_to_truth);
        }
    }

    #[test]
    fn orthogonalized_fit_maintains_unit_determinants() {
        let (stats, n, init, _) = small_problem(13);
        let cfg = OptimizerConfig::new(
            MetricKind::PullbackOrthogonalized,
            StepSizes::Global(0.05),
            60,
        );
        let (fitted, trace) = fit_joint(&stats, n, &init, &cfg, None).unwrap();
        assert!(fitted.factors().factor(2).logdet().abs() <= 1e-10);
        for row in trace.rows() {
            assert!(row.logdets[1].abs() <= 1e-10);
        }
        // dof feasibility is structural
        assert!(fitted.nu_v() > 5.0);
    }

    #[test]
    fn mean_field_prior_only_converges_to_prior() {
        let dims = FactorDims::new(&[2, 2]).unwrap();
        let gamma = 2.0f64;
        let stats = SufficientStats::new(dims.clone(), DMatrix::zeros(4, 4)).unwrap();
        let init = MeanFieldState::random_init(&dims, gamma, &mut seeded_rng(3)).unwrap();
        let cfg = OptimizerConfig::new(MetricKind::ProductManifold, StepSizes::Global(0.2), 4000);
        let (fitted, trace) = fit_mean_field(&stats, 0, &init, &cfg, None).unwrap();
        assert_eq!(trace.status, RunStatus::Converged);
        let root = gamma.sqrt();
        for i in 1..=2 {
            let expect = DMatrix::from_diagonal_element(2, 2, root / 2.0);
            assert!(
                (fitted.factors().factor(i).values() - expect).norm() < 1e-4,
                "mode {i}"
            );
            assert!((fitted.nu(i) - 4.0).abs() < 1e-3);
        }
    }

    #[test]
    fn convergence_classifier_cases() {
        let cfg =
            OptimizerConfig::<f64>::new(MetricKind::ProductManifold, StepSizes::Global(0.1), 10);
        let row = |iteration: usize, elbo: f64, grad: f64| TraceRow {
            iteration,
            elbo,
            grad_norm: grad,
            logdets: vec![],
            dof: vec![],
            distance_to_truth: None,
            mean: None,
        };
        let mut constant = Trace::new();
        for i in 1..=60 {
            constant.push(row(i, -5.0, 1e-9));
        }
        assert_eq!(check_convergence(&constant, &cfg), RunStatus::Converged);

        let mut rising = Trace::new();
        for i in 1..=60 {
            rising.push(row(i, i as f64, 1.0));
        }
        assert_eq!(check_convergence(&rising, &cfg), RunStatus::Running);

        let mut stalled = Trace::new();
        for i in 1..=60 {
            stalled.push(row(i, -5.0, 1.0));
        }
        assert_eq!(check_convergence(&stalled, &cfg), RunStatus::Stalled);

        let mut diverged = Trace::new();
        diverged.push(row(1, f64::NAN, 1.0));
        assert_eq!(check_convergence(&diverged, &cfg), RunStatus::Diverged);
    }

    #[test]
    fn distance_to_truth_identities() {
        let mut r = rng(15);
        let truth = FactorSet::from_matrices(vec![
            random_spd::<f64>(2, &mut r),
            random_spd::<f64>(2, &mut r),
        ])
        .unwrap();
        // mean equal to truth → 0
        let zero = mean_distance_sq(&truth, &GroundTruth::Factors(truth.clone())).unwrap();
        assert!(zero.abs() < 1e-10);

        // factor-wise equals dense
        let mean = FactorSet::from_matrices(vec![
            random_spd::<f64>(2, &mut r),
            random_spd::<f64>(2, &mut r),
        ])
        .unwrap();
        let fast = mean_distance_sq(&mean, &GroundTruth::Factors(truth.clone())).unwrap();
        let dense = mean_distance_sq(&mean, &GroundTruth::Dense(truth.dense())).unwrap();
        assert!((fast - dense).abs() <= 1e-12 * dense.max(1.0));

        // norm homogeneity: distance(c·truth) from a zero-ish mean scales by c²
        let c = 3.0;
        let scaled = GroundTruth::Dense(truth.dense() * c);
        let tiny = FactorSet::from_matrices(vec![
            DMatrix::from_diagonal_element(2, 2, 1e-12),
            DMatrix::from_diagonal_element(2, 2, 1e-12),
        ])
        .unwrap();
        let base = mean_distance_sq(&tiny, &GroundTruth::Dense(truth.dense())).unwrap();
        let grown = mean_distance_sq(&tiny, &scaled).unwrap();
        assert!((grown / base - c * c).abs() < 1e-6);
    }
}
