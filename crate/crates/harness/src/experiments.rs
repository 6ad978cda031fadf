//! The reproducible experiments: convergence sweeps over step-size grids,
//! pullback-versus-product metric comparison, the posterior-predictive
//! Mahalanobis study with an unstructured baseline, the iterations-to-
//! threshold table under low-rank misspecification, and the real-data
//! eigen-analysis workflow.
//!
//! Every experiment is deterministic given its spec: the master seed is
//! split into named sub-streams (truth, data, inits, per-cell fits), and
//! independent grid cells run in a parallel worker pool with results merged
//! in cell order.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{HarnessError, Result};
use crate::report::{EigenRecord, MahalanobisRecord, MisspecRecord, SweepRecord};
use crate::truth::{misspecified_truth, simulate_dense_gaussian, well_conditioned_truth};
use multiway_vb::elbo::{JointPrior, JointState, MeanFieldState, PriorScale};
use multiway_vb::kron::{FactorDims, SufficientStats};
use multiway_vb::optimizer::{
    fit_joint, fit_mean_field, GroundTruth, OptimizerConfig, RunStatus, StepSizes, Trace,
};
use multiway_vb::sampling::{
    mahalanobis_predictive, random_iw_factor_set, sample_dense_iw, sample_joint_iw,
    sample_mean_field, substream, CovarianceDraw,
};
use multiway_vb::spd::{FactorSet, SpdMatrix};

/// Which experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    ConvergenceSweep,
    MetricComparison,
    MahalanobisStudy,
    MisspecTable,
    RealDataFit,
}

#[derive(Debug, Clone, Serialize)]
pub struct MisspecParams {
    pub ranks: Vec<usize>,
    pub xi: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DrawCounts {
    pub k: usize,
    pub m: usize,
}

/// Full experiment specification. `reference_defaults` pins the reference
/// protocol (dims (5,6,4,3), n = 50, the step-size grids, K = 200, m = 100,
/// r grid with ξ = .2 and β = .005); every field stays overridable.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSpec {
    #[serde(skip)]
    pub kind: ExperimentKind,
    pub dims: Vec<usize>,
    pub n_obs: usize,
    pub seed: u64,
    /// log10 step sizes for joint-model cells (global step).
    pub joint_eps_log10: Vec<f64>,
    /// log10 step sizes for mean-field cells (global step).
    pub mf_eps_log10: Vec<f64>,
    /// Pullback-arm factor step of the metric comparison (log10).
    pub pullback_eps_log10: f64,
    /// Product-arm factor step grid of the metric comparison (log10).
    pub product_eps_log10: Vec<f64>,
    /// Dof step (log10) where split steps are used.
    pub dof_eps_log10: f64,
    pub joint_iters: usize,
    pub mf_iters: usize,
    pub record_every: usize,
    pub misspec: MisspecParams,
    pub draws: DrawCounts,
    /// Step-halving guard; off in the reproduction protocols, which
    /// deliberately exhibit fixed-step instability.
    pub backtracking: bool,
    /// Initialization gamma of the real-data workflow.
    pub real_data_gamma: f64,
}

impl ExperimentSpec {
    pub fn reference_defaults(kind: ExperimentKind) -> Self {
        Self {
            kind,
            dims: vec![5, 6, 4, 3],
            n_obs: if kind == ExperimentKind::MisspecTable {
                2000
            } else {
                50
            },
            seed: 1,
            joint_eps_log10: match kind {
                ExperimentKind::MahalanobisStudy => vec![-4.4],
                ExperimentKind::MisspecTable => vec![-4.25],
                _ => vec![-6.0, -5.5, -5.0, -4.75, -4.5, -4.4, -4.25],
            },
            mf_eps_log10: match kind {
                ExperimentKind::MahalanobisStudy => vec![-5.5],
                ExperimentKind::MisspecTable => vec![-5.5],
                _ => vec![-7.0, -6.5, -6.0, -5.75, -5.5],
            },
            pullback_eps_log10: -3.5,
            product_eps_log10: vec![-4.9, -5.0, -5.1, -5.35, -5.5, -6.0],
            dof_eps_log10: if kind == ExperimentKind::MisspecTable {
                -5.3
            } else {
                -5.0
            },
            joint_iters: if kind == ExperimentKind::RealDataFit {
                400
            } else {
                3000
            },
            mf_iters: if kind == ExperimentKind::MisspecTable {
                30000
            } else {
                10000
            },
            record_every: 1,
            misspec: MisspecParams {
                ranks: vec![1, 3, 5, 10],
                xi: 0.2,
                beta: 0.005,
            },
            draws: DrawCounts { k: 200, m: 100 },
            backtracking: matches!(kind, ExperimentKind::RealDataFit),
            real_data_gamma: 5.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != ExperimentKind::RealDataFit {
            if self.dims.is_empty() || self.dims.iter().any(|&d| d == 0) {
                return Err(HarnessError::InvalidSpec("dims must be positive".into()));
            }
            if self.n_obs == 0 {
                return Err(HarnessError::InvalidSpec("n_obs must be positive".into()));
            }
        }
        match self.kind {
            ExperimentKind::ConvergenceSweep => {
                if self.joint_eps_log10.is_empty() && self.mf_eps_log10.is_empty() {
                    return Err(HarnessError::InvalidSpec(
                        "step-size grids are empty".into(),
                    ));
                }
            }
            ExperimentKind::MetricComparison => {
                if self.product_eps_log10.is_empty() {
                    return Err(HarnessError::InvalidSpec(
                        "product-metric grid is empty".into(),
                    ));
                }
            }
            ExperimentKind::MisspecTable => {
                if self.misspec.ranks.is_empty() {
                    return Err(HarnessError::InvalidSpec("rank grid is empty".into()));
                }
                if self.misspec.xi <= 0.0 || self.misspec.beta <= 0.0 {
                    return Err(HarnessError::InvalidSpec(
                        "xi and beta must be positive".into(),
                    ));
                }
            }
            ExperimentKind::MahalanobisStudy => {
                if self.draws.k == 0 || self.draws.m == 0 {
                    return Err(HarnessError::InvalidSpec(
                        "draw counts must be positive".into(),
                    ));
                }
            }
            ExperimentKind::RealDataFit => {
                if self.real_data_gamma <= 0.0 {
                    return Err(HarnessError::InvalidSpec("gamma must be positive".into()));
                }
            }
        }
        if self.joint_iters == 0 || self.mf_iters == 0 || self.record_every == 0 {
            return Err(HarnessError::InvalidSpec(
                "iteration and recording counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A grid cell that failed, preserved as a record instead of aborting the
/// experiment.
#[derive(Debug, Clone, Serialize)]
pub struct CellFailure {
    pub method: String,
    pub eps_log10: f64,
    pub error: String,
}

/// Simulation context shared by the simulated-data experiments.
struct SimContext {
    dims: FactorDims,
    truth: FactorSet<f64>,
    stats: SufficientStats<f64>,
    prior: JointPrior<f64>,
    init_joint: JointState<f64>,
    init_mf: MeanFieldState<f64>,
}

fn weak_factor_prior(dims: &FactorDims, gamma: f64) -> Result<JointPrior<f64>> {
    let root = gamma.powf(1.0 / dims.n_modes() as f64);
    let mats: Vec<DMatrix<f64>> = dims
        .dims()
        .iter()
        .map(|&d| DMatrix::from_diagonal_element(d, d, root / d as f64))
        .collect();
    Ok(JointPrior {
        nu: (dims.total() + 2) as f64,
        scale: PriorScale::Factors(FactorSet::from_matrices(mats).map_err(HarnessError::Core)?),
    })
}

fn simulate_context(spec: &ExperimentSpec) -> Result<SimContext> {
    let dims = FactorDims::new(&spec.dims).map_err(HarnessError::Core)?;
    let truth = well_conditioned_truth(&dims, &mut substream(spec.seed, 0))?;
    let (_, stats) = multiway_vb::sampling::sample_tensor_normal(
        &truth,
        spec.n_obs,
        &mut substream(spec.seed, 1),
    )
    .map_err(HarnessError::Core)?;
    // initialization γ = tr(S): the Gram trace puts the initial ⊗A at the
    // posterior scale; the prior uses the per-observation trace so it stays
    // a weak, one-pseudo-observation-sized ridge
    let gamma = stats.matrix().trace();
    let prior = weak_factor_prior(&dims, gamma / spec.n_obs.max(1) as f64)?;
    let init_joint =
        JointState::mean_init(&dims, prior.clone(), gamma).map_err(HarnessError::Core)?;
    let init_mf = MeanFieldState::mean_init(&dims, gamma).map_err(HarnessError::Core)?;
    Ok(SimContext {
        dims,
        truth,
        stats,
        prior,
        init_joint,
        init_mf,
    })
}

fn base_config(
    spec: &ExperimentSpec,
    metric: multiway_vb::geometry::MetricKind,
    step: StepSizes<f64>,
    iters: usize,
) -> OptimizerConfig<f64> {
    let mut cfg = OptimizerConfig::new(metric, step, iters);
    cfg.record_every = spec.record_every;
    cfg.backtracking = spec.backtracking;
    cfg.seed = spec.seed;
    cfg
}

fn trace_records(method: &str, eps_log10: f64, trace: &Trace<f64>) -> Vec<SweepRecord> {
    trace
        .rows()
        .iter()
        .map(|r| SweepRecord {
            method: method.into(),
            eps_log10,
            iteration: r.iteration,
            elbo: r.elbo,
            grad_norm: r.grad_norm,
            distance_to_truth: r.distance_to_truth,
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
    pub failures: Vec<CellFailure>,
    /// Final status per (method, eps_log10) cell.
    pub statuses: Vec<(String, f64, String)>,
}

/// Fits the joint model (orthogonalized pullback) and the mean-field model
/// (product metric) across their global step-size grids on one simulated
/// data set, recording every trace.
pub fn run_convergence_sweep(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    let ctx = simulate_context(spec)?;
    let truth = GroundTruth::Factors(ctx.truth.clone());

    enum Cell {
        Joint(f64),
        MeanField(f64),
    }
    let mut cells = Vec::new();
    cells.extend(spec.joint_eps_log10.iter().map(|&e| Cell::Joint(e)));
    cells.extend(spec.mf_eps_log10.iter().map(|&e| Cell::MeanField(e)));

    let outcomes: Vec<_> = cells
        .par_iter()
        .map(|cell| match cell {
            Cell::Joint(e) => {
                let cfg = base_config(
                    spec,
                    multiway_vb::geometry::MetricKind::PullbackOrthogonalized,
                    StepSizes::Global(10f64.powf(*e)),
                    spec.joint_iters,
                );
                (
                    "joint",
                    *e,
                    fit_joint(&ctx.stats, spec.n_obs, &ctx.init_joint, &cfg, Some(&truth))
                        .map(|(_, t)| t),
                )
            }
            Cell::MeanField(e) => {
                let cfg = base_config(
                    spec,
                    multiway_vb::geometry::MetricKind::ProductManifold,
                    StepSizes::Global(10f64.powf(*e)),
                    spec.mf_iters,
                );
                (
                    "meanfield",
                    *e,
                    fit_mean_field(&ctx.stats, spec.n_obs, &ctx.init_mf, &cfg, Some(&truth))
                        .map(|(_, t)| t),
                )
            }
        })
        .collect();

    let mut result = SweepResult {
        records: Vec::new(),
        failures: Vec::new(),
        statuses: Vec::new(),
    };
    for (method, eps, outcome) in outcomes {
        match outcome {
            Ok(trace) => {
                result
                    .statuses
                    .push((method.into(), eps, format!("{:?}", trace.status)));
                result.records.extend(trace_records(method, eps, &trace));
            }
            Err(e) => result.failures.push(CellFailure {
                method: method.into(),
                eps_log10: eps,
                error: e.to_string(),
            }),
        }
    }
    Ok(result)
}

/// Joint model only: orthogonalized pullback at its largest stable factor
/// step against the product metric across a factor-step grid, both with the
/// same split dof step, same truth, data and initial state.
pub fn run_metric_comparison(spec: &ExperimentSpec) -> Result<SweepResult> {
    spec.validate()?;
    let ctx = simulate_context(spec)?;
    let truth = GroundTruth::Factors(ctx.truth.clone());
    let dof_eps = 10f64.powf(spec.dof_eps_log10);

    let mut cells: Vec<(multiway_vb::geometry::MetricKind, f64, &str)> = vec![(
        multiway_vb::geometry::MetricKind::PullbackOrthogonalized,
        spec.pullback_eps_log10,
        "pullback",
    )];
    cells.extend(spec.product_eps_log10.iter().map(|&e| {
        (
            multiway_vb::geometry::MetricKind::ProductManifold,
            e,
            "product",
        )
    }));

    let outcomes: Vec<_> = cells
        .par_iter()
        .map(|(metric, eps, name)| {
            let cfg = base_config(
                spec,
                *metric,
                StepSizes::Split {
                    factors: 10f64.powf(*eps),
                    dof: dof_eps,
                },
                spec.joint_iters,
            );
            (
                *name,
                *eps,
                fit_joint(&ctx.stats, spec.n_obs, &ctx.init_joint, &cfg, Some(&truth))
                    .map(|(_, t)| t),
            )
        })
        .collect();

    let mut result = SweepResult {
        records: Vec::new(),
        failures: Vec::new(),
        statuses: Vec::new(),
    };
    for (name, eps, outcome) in outcomes {
        match outcome {
            Ok(trace) => {
                result
                    .statuses
                    .push((name.into(), eps, format!("{:?}", trace.status)));
                result.records.extend(trace_records(name, eps, &trace));
            }
            Err(e) => result.failures.push(CellFailure {
                method: name.into(),
                eps_log10: eps,
                error: e.to_string(),
            }),
        }
    }
    Ok(result)
}

#[derive(Debug, Clone, Serialize)]
pub struct MahalanobisSummary {
    pub method: String,
    pub mean: f64,
    pub variance: f64,
    pub q05: f64,
    pub median: f64,
    pub q95: f64,
}

#[derive(Debug, Serialize)]
pub struct MahalanobisResult {
    pub records: Vec<MahalanobisRecord>,
    pub summaries: Vec<MahalanobisSummary>,
}

fn summarize(method: &str, values: &[f64]) -> MahalanobisSummary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let at =
        |q: f64| sorted[((q * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1)];
    MahalanobisSummary {
        method: method.into(),
        mean,
        variance,
        q05: at(0.05),
        median: at(0.5),
        q95: at(0.95),
    }
}

/// Posterior-predictive Mahalanobis study: fits joint and mean-field, draws
/// `K` covariances from each fitted approximation and from the exact
/// unstructured conjugate posterior (dense Bartlett; refused above order
/// 6000), and averages `m` Gaussian quadratic forms against the ground
/// truth inverse per draw.
pub fn run_mahalanobis_study(spec: &ExperimentSpec) -> Result<MahalanobisResult> {
    spec.validate()?;
    let ctx = simulate_context(spec)?;
    let p = ctx.dims.total();
    if p > 6000 {
        return Err(HarnessError::InvalidSpec(format!(
            "dense unstructured baseline refused for order {p} > 6000"
        )));
    }

    let joint_eps = 10f64.powf(*spec.joint_eps_log10.last().expect("validated non-empty"));
    let mf_eps = 10f64.powf(*spec.mf_eps_log10.last().expect("validated non-empty"));
    let cfg_joint = base_config(
        spec,
        multiway_vb::geometry::MetricKind::PullbackOrthogonalized,
        StepSizes::Global(joint_eps),
        spec.joint_iters,
    );
    let cfg_mf = base_config(
        spec,
        multiway_vb::geometry::MetricKind::ProductManifold,
        StepSizes::Global(mf_eps),
        spec.mf_iters,
    );
    let (joint_fit, _) = fit_joint(&ctx.stats, spec.n_obs, &ctx.init_joint, &cfg_joint, None)
        .map_err(HarnessError::Core)?;
    let (mf_fit, _) = fit_mean_field(&ctx.stats, spec.n_obs, &ctx.init_mf, &cfg_mf, None)
        .map_err(HarnessError::Core)?;

    // ground-truth precision through per-mode Cholesky inverses
    let truth_inv = multiway_vb::kron::kronecker_product(
        &ctx.truth
            .factors()
            .iter()
            .map(|f| f.inverse())
            .collect::<Vec<_>>(),
    );

    let mut rng = substream(spec.seed, 10);
    let joint_draws: Vec<CovarianceDraw<f64>> = sample_joint_iw(
        joint_fit.nu_v(),
        joint_fit.factors(),
        spec.draws.k,
        &mut rng,
    )
    .map_err(HarnessError::Core)?
    .into_iter()
    .map(CovarianceDraw::Dense)
    .collect();
    let mf_draws: Vec<CovarianceDraw<f64>> =
        sample_mean_field(&mf_fit.nus(), mf_fit.factors(), spec.draws.k, &mut rng)
            .map_err(HarnessError::Core)?
            .into_iter()
            .map(CovarianceDraw::Separable)
            .collect();

    // exact unstructured conjugate posterior IW(ν + n, Λ + S)
    let PriorScale::Factors(prior_factors) = &ctx.prior.scale else {
        unreachable!("simulated contexts use factorized priors")
    };
    let posterior_scale =
        SpdMatrix::new(prior_factors.dense() + ctx.stats.matrix()).map_err(HarnessError::Core)?;
    let posterior_nu = ctx.prior.nu + spec.n_obs as f64;
    let iw_draws: Vec<CovarianceDraw<f64>> =
        sample_dense_iw(posterior_nu, &posterior_scale, spec.draws.k, &mut rng)
            .map_err(HarnessError::Core)?
            .into_iter()
            .map(CovarianceDraw::Dense)
            .collect();

    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for (method, draws) in [
        ("unstructured", &iw_draws),
        ("joint", &joint_draws),
        ("meanfield", &mf_draws),
    ] {
        let ms = mahalanobis_predictive(&truth_inv, draws, spec.draws.m, &mut rng)
            .map_err(HarnessError::Core)?;
        summaries.push(summarize(method, &ms));
        records.extend(ms.into_iter().enumerate().map(|(i, m)| MahalanobisRecord {
            method: method.into(),
            draw: i,
            m_value: m,
        }));
    }
    Ok(MahalanobisResult { records, summaries })
}

#[derive(Debug, Serialize)]
pub struct MisspecResult {
    pub records: Vec<MisspecRecord>,
    /// (method, rank, iterations) with `None` when the cap was hit. For
    /// programmatic use; the serialized table lives in `records`.
    #[serde(skip)]
    pub counts: Vec<(String, usize, Option<usize>)>,
    pub failures: Vec<CellFailure>,
}

/// First recorded iteration whose variational mean is within `beta`
/// (Frobenius) of the final one.
fn iterations_to_threshold(trace: &Trace<f64>, beta: f64) -> Option<usize> {
    if trace.status == RunStatus::Diverged {
        return None;
    }
    let final_mean = trace.rows().last()?.mean.as_ref()?;
    let target = GroundTruth::Factors(final_mean.clone());
    for row in trace.rows() {
        let mean = row.mean.as_ref()?;
        let dist = multiway_vb::optimizer::mean_distance_sq(mean, &target).ok()?;
        if dist.sqrt() < beta {
            return Some(row.iteration);
        }
    }
    None
}

/// Iterations-to-threshold under misspecification: the truth is
/// `⊗Σ_i + Σ_{i≤r} x_ix_iᵀ`, and each method runs at its largest stable
/// step until its mean settles to within `β` of its final value.
pub fn run_misspec_table(spec: &ExperimentSpec) -> Result<MisspecResult> {
    spec.validate()?;
    let dims = FactorDims::new(&spec.dims).map_err(HarnessError::Core)?;
    // unit-determinant base across all modes: the rank-r perturbation then
    // sets the distance from separability, so the iteration counts track r
    let mut base = well_conditioned_truth(&dims, &mut substream(spec.seed, 0))?;
    base = base
        .with_factor(
            1,
            base.factor(1)
                .unit_determinant()
                .map_err(HarnessError::Core)?,
        )
        .map_err(HarnessError::Core)?;
    let joint_eps = 10f64.powf(*spec.joint_eps_log10.last().expect("validated non-empty"));
    let mf_eps = 10f64.powf(*spec.mf_eps_log10.last().expect("validated non-empty"));

    let cells: Vec<(usize, bool)> = spec
        .misspec
        .ranks
        .iter()
        .flat_map(|&r| [(r, true), (r, false)])
        .collect();

    let outcomes: Vec<_> = cells
        .par_iter()
        .map(|&(r, is_joint)| {
            let run = || -> Result<Trace<f64>> {
                let truth = misspecified_truth(
                    &base,
                    r,
                    spec.misspec.xi,
                    &mut substream(spec.seed, 100 + r as u64),
                )?;
                let stats = simulate_dense_gaussian(
                    &truth,
                    &dims,
                    spec.n_obs,
                    &mut substream(spec.seed, 200 + r as u64),
                )?;
                let gamma = stats.matrix().trace();
                if is_joint {
                    let prior = weak_factor_prior(&dims, gamma / spec.n_obs.max(1) as f64)?;
                    let init =
                        JointState::mean_init(&dims, prior, gamma).map_err(HarnessError::Core)?;
                    let mut cfg = base_config(
                        spec,
                        multiway_vb::geometry::MetricKind::PullbackOrthogonalized,
                        StepSizes::Split {
                            factors: joint_eps,
                            dof: 10f64.powf(spec.dof_eps_log10),
                        },
                        spec.joint_iters,
                    );
                    cfg.record_means = true;
                    cfg.record_every = 1;
                    Ok(fit_joint(&stats, spec.n_obs, &init, &cfg, None)
                        .map_err(HarnessError::Core)?
                        .1)
                } else {
                    let init =
                        MeanFieldState::mean_init(&dims, gamma).map_err(HarnessError::Core)?;
                    let mut cfg = base_config(
                        spec,
                        multiway_vb::geometry::MetricKind::ProductManifold,
                        StepSizes::Global(mf_eps),
                        spec.mf_iters,
                    );
                    cfg.record_means = true;
                    cfg.record_every = 1;
                    Ok(fit_mean_field(&stats, spec.n_obs, &init, &cfg, None)
                        .map_err(HarnessError::Core)?
                        .1)
                }
            };
            (r, is_joint, run())
        })
        .collect();

    let mut result = MisspecResult {
        records: Vec::new(),
        counts: Vec::new(),
        failures: Vec::new(),
    };
    for (r, is_joint, outcome) in outcomes {
        let (method, cap) = if is_joint {
            ("joint", spec.joint_iters)
        } else {
            ("meanfield", spec.mf_iters)
        };
        match outcome {
            Ok(trace) => {
                let count = iterations_to_threshold(&trace, spec.misspec.beta);
                result.records.push(MisspecRecord {
                    method: method.into(),
                    rank: r,
                    iterations: count.map_or(format!(">{cap}"), |c| c.to_string()),
                });
                result.counts.push((method.into(), r, count));
            }
            Err(e) => result.failures.push(CellFailure {
                method: method.into(),
                eps_log10: if is_joint {
                    spec.joint_eps_log10[0]
                } else {
                    spec.mf_eps_log10[0]
                },
                error: e.to_string(),
            }),
        }
    }
    result
        .counts
        .sort_by(|a, b| (a.0.clone(), a.1).cmp(&(b.0.clone(), b.1)));
    Ok(result)
}

/// Per-mode correlation eigen-summary of a fitted joint state.
#[derive(Debug, Clone, Serialize)]
pub struct ModeSummary {
    pub mode: usize,
    pub eigenvalues: Vec<f64>,
    /// First two components of each eigenvector, eigenvalue-descending.
    pub components: Vec<(f64, f64)>,
}

pub struct RealDataResult {
    pub state: JointState<f64>,
    pub trace: Trace<f64>,
    pub status: RunStatus,
    pub summaries: Vec<ModeSummary>,
    pub correlations: Vec<DMatrix<f64>>,
}

impl RealDataResult {
    pub fn eigen_records(&self) -> Vec<EigenRecord> {
        self.summaries
            .iter()
            .flat_map(|s| {
                s.eigenvalues.iter().zip(&s.components).enumerate().map(
                    move |(i, (&ev, &(c1, c2)))| EigenRecord {
                        mode: s.mode,
                        index: i + 1,
                        eigenvalue: ev,
                        component_1: c1,
                        component_2: c2,
                    },
                )
            })
            .collect()
    }
}

/// Unit-diagonal correlation matrix of an SPD factor.
pub fn correlation_matrix(values: &DMatrix<f64>) -> DMatrix<f64> {
    let n = values.nrows();
    let inv_sd: Vec<f64> = (0..n).map(|i| 1.0 / values[(i, i)].sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else {
            values[(i, j)] * inv_sd[i] * inv_sd[j]
        }
    })
}

fn eigen_summary(mode: usize, corr: &DMatrix<f64>) -> ModeSummary {
    let eig = corr.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite")
    });
    ModeSummary {
        mode,
        eigenvalues: order.iter().map(|&i| eig.eigenvalues[i]).collect(),
        components: order
            .iter()
            .map(|&i| (eig.eigenvectors[(0, i)], eig.eigenvectors[(1, i)]))
            .collect(),
    }
}

/// The real-data workflow: centers the observations (last mode of the
/// array), forms `S`, sets the prior to the sample covariance (the
/// marginal-posterior construction after integrating the mean out), fits
/// the joint model under the orthogonalized pullback, and summarizes the
/// per-mode mean correlation matrices through their eigendecompositions.
pub fn run_real_data_fit(
    data: &crate::data::DataArray,
    spec: &ExperimentSpec,
) -> Result<RealDataResult> {
    spec.validate()?;
    if data.shape.len() < 2 {
        return Err(HarnessError::InvalidSpec(
            "data array needs at least one mode plus the observation mode".into(),
        ));
    }
    let (stats, _mean) = data.centered_stats()?;
    let n = data.n_observations();
    let dims = stats.dims().clone();
    let p = dims.total();

    // prior scale: the sample covariance C = S/(n−1)
    let c = stats.matrix() / (n.max(2) - 1) as f64;
    let prior = JointPrior {
        nu: (p + 2) as f64,
        scale: PriorScale::Dense(c),
    };

    // per-mode init A_i ~ IW(d_i + 2, (γ/d_i)·I), modes i>1 unit-determinant
    let gamma = spec.real_data_gamma;
    let dofs: Vec<f64> = dims.dims().iter().map(|&d| (d + 2) as f64).collect();
    let scales: Vec<f64> = dims.dims().iter().map(|&d| gamma / d as f64).collect();
    let mut init_factors =
        random_iw_factor_set(&dims, &dofs, &scales, &mut substream(spec.seed, 4))
            .map_err(HarnessError::Core)?;
    for i in 2..=dims.n_modes() {
        init_factors = init_factors
            .with_factor(
                i,
                init_factors
                    .factor(i)
                    .unit_determinant()
                    .map_err(HarnessError::Core)?,
            )
            .map_err(HarnessError::Core)?;
    }
    let init = JointState::new(init_factors, (p + 2) as f64, prior).map_err(HarnessError::Core)?;

    let cfg = base_config(
        spec,
        multiway_vb::geometry::MetricKind::PullbackOrthogonalized,
        StepSizes::Split {
            factors: 10f64.powf(spec.pullback_eps_log10),
            dof: 10f64.powf(spec.dof_eps_log10),
        },
        spec.joint_iters,
    );
    let (state, trace) = fit_joint(&stats, n, &init, &cfg, None).map_err(HarnessError::Core)?;

    let correlations: Vec<DMatrix<f64>> = (1..=dims.n_modes())
        .map(|i| correlation_matrix(state.factors().factor(i).values()))
        .collect();
    let summaries = correlations
        .iter()
        .enumerate()
        .map(|(i, c)| eigen_summary(i + 1, c))
        .collect();
    let status = trace.status;
    Ok(RealDataResult {
        state,
        trace,
        status,
        summaries,
        correlations,
    })
}
