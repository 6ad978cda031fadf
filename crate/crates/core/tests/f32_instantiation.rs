//! The whole pipeline instantiated at `f32`: draws, traces, bounds,
//! gradients and a short fit. Tolerances are loose — single precision — but
//! every code path must compile and stay finite, and agree with the `f64`
//! instantiation to within single-precision round-off on the same seed
//! (the random streams are generated in f64 and converted, so they match).

use multiway_vb::elbo::{elbo_joint, JointPrior, JointState, PriorScale};
use multiway_vb::geometry::MetricKind;
use multiway_vb::kron::{kronecker_product, FactorDims, SufficientStats};
use multiway_vb::optimizer::{fit_joint, OptimizerConfig, RunStatus, StepSizes};
use multiway_vb::sampling::{sample_tensor_normal, seeded_rng};
use multiway_vb::spd::FactorSet;
use multiway_vb::testing::random_spd;

fn setup<T: multiway_vb::Real>() -> (SufficientStats<T>, usize, JointState<T>) {
    let dims = FactorDims::new(&[2, 3]).unwrap();
    let truth = FactorSet::from_matrices(vec![
        random_spd::<T>(2, &mut seeded_rng(1)),
        random_spd::<T>(3, &mut seeded_rng(2)),
    ])
    .unwrap();
    let n = 30;
    let (_, stats) = sample_tensor_normal(&truth, n, &mut seeded_rng(3)).unwrap();
    let gamma = stats.matrix().trace();
    let prior = JointPrior {
        nu: T::of_usize(dims.total() + 2),
        scale: PriorScale::Factors(FactorSet::identity(&dims)),
    };
    let init = JointState::mean_init(&dims, prior, gamma).unwrap();
    (stats, n, init)
}

#[test]
fn single_precision_pipeline_runs_and_matches_double() {
    let (stats32, n, init32) = setup::<f32>();
    let (stats64, _, init64) = setup::<f64>();

    // identical draw streams across precisions
    for (a, b) in stats32.matrix().iter().zip(stats64.matrix().iter()) {
        assert!((*a as f64 - b).abs() <= 1e-3 * b.abs().max(1.0));
    }

    let ev32 = elbo_joint(&init32, &stats32, n, true).unwrap();
    let ev64 = elbo_joint(&init64, &stats64, n, true).unwrap();
    assert!(
        (ev32.value as f64 - ev64.value).abs() <= 1e-3 * ev64.value.abs(),
        "f32 bound {} vs f64 bound {}",
        ev32.value,
        ev64.value
    );

    // the bound's data trace runs over S + Λ (the identity-factor prior)
    let trace_oracle = {
        let inv: Vec<_> = init64
            .factors()
            .factors()
            .iter()
            .map(|f| f.inverse())
            .collect();
        let p = stats64.dims().total();
        let aug = stats64.matrix() + nalgebra::DMatrix::<f64>::identity(p, p);
        (kronecker_product(&inv) * aug).trace()
    };
    assert!((ev64.data_trace - trace_oracle).abs() <= 1e-9 * trace_oracle.abs());
    assert!((ev32.data_trace as f64 - trace_oracle).abs() <= 1e-3 * trace_oracle.abs());

    let cfg = OptimizerConfig::<f32>::new(
        MetricKind::PullbackOrthogonalized,
        StepSizes::Global(1e-3),
        40,
    );
    let (fitted, trace) = fit_joint(&stats32, n, &init32, &cfg, None).unwrap();
    assert_ne!(trace.status, RunStatus::Diverged);
    assert!(fitted.nu_v().is_finite());
    let first = trace.rows().first().unwrap().elbo;
    let last = trace.rows().last().unwrap().elbo;
    assert!(last >= first, "no ascent in f32: {first} -> {last}");
}
