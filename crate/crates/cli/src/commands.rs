//! Subcommand implementations. Each writes its outputs and the resolved
//! config echo into the `--out` directory.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;
use multiway_vb::elbo::{JointPrior, JointState, MeanFieldState, PriorScale};
use multiway_vb::geometry::MetricKind;
use multiway_vb::kron::{nearest_kronecker_residual, FactorDims};
use multiway_vb::optimizer::{
    fit_joint, fit_mean_field, OptimizerConfig, RunStatus, StepSizes, Trace,
};
use multiway_vb::sampling::{
    sample_joint_iw, sample_mean_field, sample_tensor_normal, seeded_rng, substream,
};
use multiway_vb::spd::FactorSet;
use multiway_vb_harness::data::{read_tensor, write_tensor, DataArray};
use multiway_vb_harness::experiments::{
    run_convergence_sweep, run_mahalanobis_study, run_metric_comparison, run_misspec_table,
    run_real_data_fit, ExperimentKind, ExperimentSpec,
};
use multiway_vb_harness::report::{
    write_eigen_csv, write_mahalanobis_csv, write_misspec_csv, write_sweep_csv, write_toml,
    write_trace_csv, FactorFile, StateFile,
};
use multiway_vb_harness::truth::well_conditioned_truth;

const DENSE_ORDER_LIMIT: usize = 6000;

fn ensure_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.require_out()?.clone();
    fs::create_dir_all(&out)
        .map_err(|e| CliError::io(format!("cannot create {}: {e}", out.display())))?;
    Ok(out)
}

fn parse_metric(name: &str) -> Result<MetricKind, CliError> {
    match name {
        "pullback" => Ok(MetricKind::PullbackOrthogonalized),
        "product" => Ok(MetricKind::ProductManifold),
        "pullback-naive" => Err(CliError::validation(
            "metric 'pullback-naive' is degenerate and refused; use 'pullback'".into(),
        )),
        other => Err(CliError::validation(format!(
            "unknown metric {other:?}; expected pullback | product"
        ))),
    }
}

fn weak_factor_prior(dims: &FactorDims, gamma: f64) -> Result<JointPrior<f64>, CliError> {
    let root = gamma.powf(1.0 / dims.n_modes() as f64);
    let mats: Vec<DMatrix<f64>> = dims
        .dims()
        .iter()
        .map(|&d| DMatrix::from_diagonal_element(d, d, root / d as f64))
        .collect();
    Ok(JointPrior {
        nu: (dims.total() + 2) as f64,
        scale: PriorScale::Factors(FactorSet::from_matrices(mats).map_err(CliError::from)?),
    })
}

pub fn cmd_simulate(cfg: RunConfig) -> Result<(), CliError> {
    let dims_vec = cfg
        .dims
        .clone()
        .ok_or_else(|| CliError::validation("--dims is required".into()))?;
    let n = cfg
        .n
        .ok_or_else(|| CliError::validation("--n is required".into()))?;
    if n == 0 {
        return Err(CliError::validation("--n must be at least 1".into()));
    }
    let seed = cfg.seed();
    let out = ensure_out(&cfg)?;
    let dims = FactorDims::new(&dims_vec).map_err(CliError::from)?;

    let truth = well_conditioned_truth(&dims, &mut substream(seed, 0))?;
    let (ys, stats) =
        sample_tensor_normal(&truth, n, &mut substream(seed, 1)).map_err(CliError::from)?;

    // observations on the last mode, matching the ingestion convention
    let p = dims.total();
    let mut values = vec![0.0f64; p * n];
    for (t, y) in ys.iter().enumerate() {
        for i in 0..p {
            values[i * n + t] = y[i];
        }
    }
    let mut shape = dims_vec.clone();
    shape.push(n);
    let array = DataArray::new(shape, values)?;
    write_tensor(&out.join("data.bin"), &array)?;
    FactorFile::from_factor_set(&truth).write(&out.join("truth.toml"))?;

    let sum: f64 = stats.matrix().iter().sum();
    println!(
        "wrote {} observations of {:?} to {}",
        n,
        dims_vec,
        out.display()
    );
    println!("S checksum: sum={:?} fro={:?}", sum, stats.matrix().norm());
    cfg.echo_to(&out)
}

#[derive(Serialize)]
struct FitSummary {
    method: String,
    metric: String,
    status: String,
    iterations: usize,
    final_elbo: f64,
    dof: Vec<f64>,
    logdets: Vec<f64>,
}

fn print_last_row(trace: &Trace<f64>) {
    if let Some(row) = trace.rows().last() {
        eprintln!(
            "last trace row: iteration={} elbo={:?} grad_norm={:?}",
            row.iteration, row.elbo, row.grad_norm
        );
    }
}

pub fn cmd_fit(cfg: RunConfig) -> Result<(), CliError> {
    let data_path = cfg
        .data
        .clone()
        .ok_or_else(|| CliError::validation("--data is required".into()))?;
    let method = cfg
        .method
        .clone()
        .ok_or_else(|| CliError::validation("--method is required (joint | meanfield)".into()))?;
    let eps = cfg
        .eps
        .ok_or_else(|| CliError::validation("--eps (log10 step size) is required".into()))?;
    let out = ensure_out(&cfg)?;
    let seed = cfg.seed();

    let array = read_tensor(&data_path)?;
    let stats = array.raw_stats()?;
    let n = array.n_observations();
    let dims = stats.dims().clone();
    let gamma = cfg.gamma.unwrap_or_else(|| stats.matrix().trace());

    let step = match cfg.eps_dof {
        Some(ed) => StepSizes::Split {
            factors: 10f64.powf(eps),
            dof: 10f64.powf(ed),
        },
        None => StepSizes::Global(10f64.powf(eps)),
    };
    let iters = cfg.iters.unwrap_or(3000);
    let mut opt = OptimizerConfig::new(MetricKind::PullbackOrthogonalized, step, iters);
    opt.record_every = cfg.record_every.unwrap_or(1);
    opt.backtracking = cfg.backtracking.unwrap_or(true);
    opt.seed = seed;

    let (summary, trace) = match method.as_str() {
        "joint" => {
            opt.metric = parse_metric(cfg.metric.as_deref().unwrap_or("pullback"))?;
            let prior = weak_factor_prior(&dims, gamma / n.max(1) as f64)?;
            let init = JointState::mean_init(&dims, prior, gamma).map_err(CliError::from)?;
            let (state, trace) = fit_joint(&stats, n, &init, &opt, None).map_err(CliError::from)?;
            StateFile::from_joint(&state).write(&out.join("state.toml"))?;
            (
                FitSummary {
                    method,
                    metric: format!("{:?}", opt.metric),
                    status: format!("{:?}", trace.status),
                    iterations: trace.rows().last().map_or(0, |r| r.iteration),
                    final_elbo: trace.rows().last().map_or(f64::NAN, |r| r.elbo),
                    dof: vec![state.nu_v()],
                    logdets: state
                        .factors()
                        .factors()
                        .iter()
                        .map(|f| f.logdet())
                        .collect(),
                },
                trace,
            )
        }
        "meanfield" => {
            if let Some(metric) = cfg.metric.as_deref() {
                if metric != "product" {
                    eprintln!(
                        "warning: --method meanfield ignores --metric {metric}; the product-manifold rule is used and no normalization applies"
                    );
                }
            }
            opt.metric = MetricKind::ProductManifold;
            let init = MeanFieldState::mean_init(&dims, gamma).map_err(CliError::from)?;
            let (state, trace) =
                fit_mean_field(&stats, n, &init, &opt, None).map_err(CliError::from)?;
            StateFile::from_mean_field(&state).write(&out.join("state.toml"))?;
            (
                FitSummary {
                    method,
                    metric: "ProductManifold".into(),
                    status: format!("{:?}", trace.status),
                    iterations: trace.rows().last().map_or(0, |r| r.iteration),
                    final_elbo: trace.rows().last().map_or(f64::NAN, |r| r.elbo),
                    dof: state.nus(),
                    logdets: state
                        .factors()
                        .factors()
                        .iter()
                        .map(|f| f.logdet())
                        .collect(),
                },
                trace,
            )
        }
        other => {
            return Err(CliError::validation(format!(
                "unknown method {other:?}; expected joint | meanfield"
            )))
        }
    };

    write_trace_csv(&out.join("trace.csv"), &trace)?;
    write_toml(&out.join("summary.toml"), &summary)?;
    cfg.echo_to(&out)?;
    println!(
        "fit finished: status={} final_elbo={:?}",
        summary.status, summary.final_elbo
    );
    if trace.status == RunStatus::Diverged {
        print_last_row(&trace);
        return Err(CliError::numeric("optimization diverged".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct SampleSummary {
    kind: String,
    draws: usize,
    dof: Vec<f64>,
    mean_trace: f64,
    mean_rel_residual: f64,
    separable_fraction: f64,
    mean_file: String,
}

pub fn cmd_sample(cfg: RunConfig) -> Result<(), CliError> {
    let state_path = cfg
        .state
        .clone()
        .ok_or_else(|| CliError::validation("--state is required".into()))?;
    let out = ensure_out(&cfg)?;
    let k = cfg.k.unwrap_or(200);
    if k == 0 {
        return Err(CliError::validation("--K must be at least 1".into()));
    }
    let seed = cfg.seed();
    let file = StateFile::read(&state_path)?;
    let dims = FactorDims::new(&file.dims).map_err(CliError::from)?;
    let factors = file.factor_set(&state_path)?;
    let p = dims.total();
    let format = cfg.format.as_deref().unwrap_or("dense");
    let mut rng = seeded_rng(seed);

    let dense_draws: Vec<DMatrix<f64>> = match file.kind.as_str() {
        "joint" => {
            if format == "factors" {
                return Err(CliError::validation(
                    "joint draws are not separable; --format factors applies to meanfield states"
                        .into(),
                ));
            }
            if p > DENSE_ORDER_LIMIT {
                return Err(CliError::validation(format!(
                    "dense draws refused for order {p} > {DENSE_ORDER_LIMIT}"
                )));
            }
            sample_joint_iw(file.dof[0], &factors, k, &mut rng)
                .map_err(CliError::from)?
                .into_iter()
                .map(|d| d.values().clone())
                .collect()
        }
        "meanfield" => {
            let draws =
                sample_mean_field(&file.dof, &factors, k, &mut rng).map_err(CliError::from)?;
            if format == "factors" {
                #[derive(Serialize)]
                struct DrawsFile {
                    draws: Vec<FactorFile>,
                }
                let out_file = DrawsFile {
                    draws: draws.iter().map(FactorFile::from_factor_set).collect(),
                };
                write_toml(&out.join("draws.toml"), &out_file)?;
                println!(
                    "wrote {k} factor-form draws to {}",
                    out.join("draws.toml").display()
                );
                cfg.echo_to(&out)?;
                return Ok(());
            }
            if p > DENSE_ORDER_LIMIT {
                return Err(CliError::validation(format!(
                    "dense draws refused for order {p} > {DENSE_ORDER_LIMIT}; use --format factors"
                )));
            }
            draws.iter().map(|d| d.dense()).collect()
        }
        other => {
            return Err(CliError::validation(format!(
                "state file kind {other:?} not recognized"
            )))
        }
    };

    if cfg.summary.unwrap_or(false) {
        let mut mean = DMatrix::<f64>::zeros(p, p);
        for d in &dense_draws {
            mean += d;
        }
        mean /= dense_draws.len() as f64;
        let mut residual_sum = 0.0;
        let mut separable = 0usize;
        for d in &dense_draws {
            let rel = nearest_kronecker_residual(d, &dims).map_err(CliError::from)? / d.norm();
            residual_sum += rel;
            if rel < 1e-10 {
                separable += 1;
            }
        }
        let mean_array = DataArray::new(
            vec![p, p],
            (0..p * p).map(|i| mean[(i / p, i % p)]).collect(),
        )?;
        write_tensor(&out.join("mean.bin"), &mean_array)?;
        let summary = SampleSummary {
            kind: file.kind.clone(),
            draws: dense_draws.len(),
            dof: file.dof.clone(),
            mean_trace: mean.trace(),
            mean_rel_residual: residual_sum / dense_draws.len() as f64,
            separable_fraction: separable as f64 / dense_draws.len() as f64,
            mean_file: "mean.bin".into(),
        };
        write_toml(&out.join("summary.toml"), &summary)?;
        println!(
            "summary: mean_trace={:?} separable_fraction={:?}",
            summary.mean_trace, summary.separable_fraction
        );
    } else {
        let mut values = Vec::with_capacity(k * p * p);
        for d in &dense_draws {
            for i in 0..p {
                for j in 0..p {
                    values.push(d[(i, j)]);
                }
            }
        }
        let array = DataArray::new(vec![k, p, p], values)?;
        write_tensor(&out.join("draws.bin"), &array)?;
        println!(
            "wrote {k} dense draws to {}",
            out.join("draws.bin").display()
        );
    }
    cfg.echo_to(&out)
}

pub fn cmd_experiment(cfg: RunConfig) -> Result<(), CliError> {
    let name = cfg
        .experiment
        .clone()
        .ok_or_else(|| CliError::validation("--experiment is required".into()))?;
    let kind = match name.as_str() {
        "convergence-sweep" => ExperimentKind::ConvergenceSweep,
        "metric-comparison" => ExperimentKind::MetricComparison,
        "mahalanobis" => ExperimentKind::MahalanobisStudy,
        "misspec-table" => ExperimentKind::MisspecTable,
        "real-data" => ExperimentKind::RealDataFit,
        other => {
            return Err(CliError::validation(format!(
                "unknown experiment {other:?}; expected convergence-sweep | metric-comparison | mahalanobis | misspec-table | real-data"
            )))
        }
    };
    let out = ensure_out(&cfg)?;

    let mut spec = ExperimentSpec::reference_defaults(kind);
    if let Some(d) = &cfg.dims {
        spec.dims = d.clone();
    }
    if let Some(n) = cfg.n {
        spec.n_obs = n;
    }
    spec.seed = cfg.seed();
    if let Some(it) = cfg.iters {
        spec.joint_iters = it;
    }
    if let Some(re) = cfg.record_every {
        spec.record_every = re;
    }
    if let Some(bt) = cfg.backtracking {
        spec.backtracking = bt;
    }
    if let Some(e) = cfg.eps {
        spec.joint_eps_log10 = vec![e];
    }
    if let Some(ed) = cfg.eps_dof {
        spec.dof_eps_log10 = ed;
    }
    if let Some(r) = &cfg.r {
        spec.misspec.ranks = r.clone();
    }
    if let Some(xi) = cfg.xi {
        spec.misspec.xi = xi;
    }
    if let Some(beta) = cfg.beta {
        spec.misspec.beta = beta;
    }
    if let Some(k) = cfg.k {
        spec.draws.k = k;
    }
    if let Some(m) = cfg.m {
        spec.draws.m = m;
    }
    if let Some(g) = cfg.gamma {
        spec.real_data_gamma = g;
    }

    match kind {
        ExperimentKind::ConvergenceSweep => {
            let result = run_convergence_sweep(&spec)?;
            write_sweep_csv(&out.join("sweep.csv"), &result.records)?;
            write_toml(&out.join("summary.toml"), &result)?;
            finish_cells(&cfg, &out, result.statuses.len(), result.failures.len())
        }
        ExperimentKind::MetricComparison => {
            let result = run_metric_comparison(&spec)?;
            write_sweep_csv(&out.join("comparison.csv"), &result.records)?;
            write_toml(&out.join("summary.toml"), &result)?;
            finish_cells(&cfg, &out, result.statuses.len(), result.failures.len())
        }
        ExperimentKind::MahalanobisStudy => {
            let result = run_mahalanobis_study(&spec)?;
            write_mahalanobis_csv(&out.join("mahalanobis.csv"), &result.records)?;
            #[derive(Serialize)]
            struct MahalanobisReport<'a> {
                summaries: &'a [multiway_vb_harness::experiments::MahalanobisSummary],
            }
            write_toml(
                &out.join("summary.toml"),
                &MahalanobisReport {
                    summaries: &result.summaries,
                },
            )?;
            finish_cells(&cfg, &out, result.summaries.len(), 0)
        }
        ExperimentKind::MisspecTable => {
            let result = run_misspec_table(&spec)?;
            write_misspec_csv(&out.join("misspec.csv"), &result.records)?;
            write_toml(&out.join("summary.toml"), &result)?;
            finish_cells(&cfg, &out, result.counts.len(), result.failures.len())
        }
        ExperimentKind::RealDataFit => {
            let data_path = cfg
                .data
                .clone()
                .ok_or_else(|| CliError::validation("--data is required for real-data".into()))?;
            let array = read_tensor(&data_path)?;
            let result = run_real_data_fit(&array, &spec)?;
            write_trace_csv(&out.join("trace.csv"), &result.trace)?;
            StateFile::from_joint(&result.state).write(&out.join("state.toml"))?;
            write_eigen_csv(&out.join("eigen.csv"), &result.eigen_records())?;
            #[derive(Serialize)]
            struct RealDataSummary {
                status: String,
                iterations: usize,
                final_elbo: f64,
                nu_v: f64,
                summaries: Vec<multiway_vb_harness::experiments::ModeSummary>,
            }
            write_toml(
                &out.join("summary.toml"),
                &RealDataSummary {
                    status: format!("{:?}", result.status),
                    iterations: result.trace.rows().last().map_or(0, |r| r.iteration),
                    final_elbo: result.trace.rows().last().map_or(f64::NAN, |r| r.elbo),
                    nu_v: result.state.nu_v(),
                    summaries: result.summaries.clone(),
                },
            )?;
            cfg.echo_to(&out)?;
            println!("real-data fit finished: status={:?}", result.status);
            Ok(())
        }
    }
}

fn finish_cells(
    cfg: &RunConfig,
    out: &Path,
    succeeded: usize,
    failed: usize,
) -> Result<(), CliError> {
    cfg.echo_to(out)?;
    println!("experiment finished: {succeeded} cells succeeded, {failed} failed");
    if succeeded == 0 && failed > 0 {
        return Err(CliError::numeric("every experiment cell failed".into()));
    }
    Ok(())
}

pub fn cmd_validate_config(path: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::from_file(path)?;
    if let Some(cmd) = cfg.command.as_deref() {
        if !matches!(cmd, "simulate" | "fit" | "sample" | "experiment") {
            return Err(CliError::validation(format!("unknown command {cmd:?}")));
        }
    }
    if let Some(dims) = &cfg.dims {
        FactorDims::new(dims).map_err(CliError::from)?;
    }
    if let Some(n) = cfg.n {
        if n == 0 {
            return Err(CliError::validation("n must be at least 1".into()));
        }
    }
    if let Some(metric) = cfg.metric.as_deref() {
        parse_metric(metric)?;
    }
    if let Some(r) = &cfg.r {
        if r.is_empty() {
            return Err(CliError::validation("rank grid must be non-empty".into()));
        }
    }
    let text = toml::to_string_pretty(&cfg)
        .map_err(|e| CliError::validation(format!("cannot serialize config: {e}")))?;
    print!("{text}");
    Ok(())
}
