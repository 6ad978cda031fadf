//! End-to-end runs of the binary: file outputs, determinism, exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_multiway-vb"))
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("mwvb-cli-tests").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn simulate_into(dir: &Path) {
    let out = run(&[
        "simulate",
        "--dims",
        "2,3,2",
        "--n",
        "24",
        "--seed",
        "9",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
}

#[test]
fn simulate_writes_expected_files_and_is_deterministic() {
    let dir = tmp("simulate");
    simulate_into(&dir);
    let data = std::fs::read(dir.join("data.bin")).unwrap();
    assert_eq!(data.len(), 12 * 24 * 8, "payload is p·n little-endian f64");
    assert!(dir.join("data.bin.toml").exists());
    assert!(dir.join("truth.toml").exists());
    assert!(dir.join("config.toml").exists());

    let dir2 = tmp("simulate-rerun");
    simulate_into(&dir2);
    assert_eq!(data, std::fs::read(dir2.join("data.bin")).unwrap());
}

#[test]
fn simulate_rejects_zero_observations() {
    let dir = tmp("simulate-zero");
    let out = run(&[
        "simulate",
        "--dims",
        "2,2",
        "--n",
        "0",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_code(&out, 1);
}

#[test]
fn fit_writes_outputs_and_echo_reproduces_them() {
    let sim = tmp("fit-sim");
    simulate_into(&sim);
    let fit = tmp("fit-run");
    let out = run(&[
        "fit",
        "--data",
        sim.join("data.bin").to_str().unwrap(),
        "--method",
        "joint",
        "--metric",
        "pullback",
        "--eps",
        "-2.5",
        "--iters",
        "40",
        "--seed",
        "3",
        "--out",
        fit.to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let trace = std::fs::read(fit.join("trace.csv")).unwrap();
    assert!(fit.join("state.toml").exists());
    assert!(fit.join("summary.toml").exists());

    // rerun purely from the echoed config
    let fit2 = tmp("fit-echo");
    let echo = fit.join("config.toml");
    let reconfigured = std::fs::read_to_string(&echo)
        .unwrap()
        .replace(fit.to_str().unwrap(), fit2.to_str().unwrap());
    let echo2 = fit2.join("rerun.toml");
    std::fs::write(&echo2, reconfigured).unwrap();
    let out = run(&["fit", "--config", echo2.to_str().unwrap()]);
    assert_code(&out, 0);
    assert_eq!(trace, std::fs::read(fit2.join("trace.csv")).unwrap());
}

#[test]
fn degenerate_metric_is_refused() {
    let sim = tmp("naive-sim");
    simulate_into(&sim);
    let out = run(&[
        "fit",
        "--data",
        sim.join("data.bin").to_str().unwrap(),
        "--method",
        "joint",
        "--metric",
        "pullback-naive",
        "--eps",
        "-3",
        "--out",
        tmp("naive-out").to_str().unwrap(),
    ]);
    assert_code(&out, 1);
}

#[test]
fn meanfield_ignores_pullback_metric_with_a_warning() {
    let sim = tmp("mfwarn-sim");
    simulate_into(&sim);
    let out = run(&[
        "fit",
        "--data",
        sim.join("data.bin").to_str().unwrap(),
        "--method",
        "meanfield",
        "--metric",
        "pullback",
        "--eps",
        "-4",
        "--iters",
        "10",
        "--out",
        tmp("mfwarn-out").to_str().unwrap(),
    ]);
    assert_code(&out, 0);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("ignores"), "stderr: {stderr}");
}

#[test]
fn missing_data_file_is_an_io_error() {
    let out = run(&[
        "fit",
        "--data",
        "/nonexistent/data.bin",
        "--method",
        "joint",
        "--eps",
        "-3",
        "--out",
        tmp("io-out").to_str().unwrap(),
    ]);
    assert_code(&out, 3);
}

#[test]
fn single_draw_is_pinned_to_the_library_stream() {
    let sim = tmp("pin-sim");
    simulate_into(&sim);
    let fit = tmp("pin-fit");
    assert_code(
        &run(&[
            "fit",
            "--data",
            sim.join("data.bin").to_str().unwrap(),
            "--method",
            "joint",
            "--eps",
            "-2.5",
            "--iters",
            "30",
            "--out",
            fit.to_str().unwrap(),
        ]),
        0,
    );
    let draws = tmp("pin-draws");
    assert_code(
        &run(&[
            "sample",
            "--state",
            fit.join("state.toml").to_str().unwrap(),
            "--K",
            "1",
            "--seed",
            "77",
            "--out",
            draws.to_str().unwrap(),
        ]),
        0,
    );

    let file = multiway_vb_harness::report::StateFile::read(&fit.join("state.toml")).unwrap();
    let factors = file.factor_set(&fit.join("state.toml")).unwrap();
    let expect = multiway_vb::sampling::sample_joint_iw(
        file.dof[0],
        &factors,
        1,
        &mut multiway_vb::sampling::seeded_rng(77),
    )
    .unwrap();

    let array = multiway_vb_harness::data::read_tensor(&draws.join("draws.bin")).unwrap();
    assert_eq!(array.shape, vec![1, 12, 12]);
    let p = 12;
    for i in 0..p {
        for j in 0..p {
            let got = array.values[i * p + j];
            let want = expect[0].values()[(i, j)];
            assert!((got - want).abs() <= 1e-14 * want.abs().max(1.0));
        }
    }
}

#[test]
fn sample_summary_flags_separability() {
    let sim = tmp("sep-sim");
    simulate_into(&sim);
    let joint_fit = tmp("sep-joint");
    assert_code(
        &run(&[
            "fit",
            "--data",
            sim.join("data.bin").to_str().unwrap(),
            "--method",
            "joint",
            "--eps",
            "-2.5",
            "--iters",
            "30",
            "--out",
            joint_fit.to_str().unwrap(),
        ]),
        0,
    );
    let mf_fit = tmp("sep-mf");
    assert_code(
        &run(&[
            "fit",
            "--data",
            sim.join("data.bin").to_str().unwrap(),
            "--method",
            "meanfield",
            "--eps",
            "-4",
            "--iters",
            "30",
            "--out",
            mf_fit.to_str().unwrap(),
        ]),
        0,
    );

    let joint_sum = tmp("sep-joint-draws");
    assert_code(
        &run(&[
            "sample",
            "--state",
            joint_fit.join("state.toml").to_str().unwrap(),
            "--K",
            "10",
            "--seed",
            "5",
            "--summary",
            "--out",
            joint_sum.to_str().unwrap(),
        ]),
        0,
    );
    let text = std::fs::read_to_string(joint_sum.join("summary.toml")).unwrap();
    assert!(text.contains("separable_fraction = 0.0"), "{text}");

    let mf_sum = tmp("sep-mf-draws");
    assert_code(
        &run(&[
            "sample",
            "--state",
            mf_fit.join("state.toml").to_str().unwrap(),
            "--K",
            "10",
            "--seed",
            "5",
            "--summary",
            "--out",
            mf_sum.to_str().unwrap(),
        ]),
        0,
    );
    let text = std::fs::read_to_string(mf_sum.join("summary.toml")).unwrap();
    assert!(text.contains("separable_fraction = 1.0"), "{text}");
}

#[test]
fn unguarded_divergence_exits_with_the_numeric_code() {
    let sim = tmp("div-sim");
    simulate_into(&sim);
    let out = run(&[
        "fit",
        "--data",
        sim.join("data.bin").to_str().unwrap(),
        "--method",
        "joint",
        "--eps",
        "3",
        "--iters",
        "20",
        "--backtracking",
        "false",
        "--out",
        tmp("div-out").to_str().unwrap(),
    ]);
    assert_code(&out, 2);
}

#[test]
fn validate_config_checks_keys_and_values() {
    let dir = tmp("validate");
    let good = dir.join("good.toml");
    std::fs::write(&good, "command = \"fit\"\ndims = [2, 3]\neps = -4.4\n").unwrap();
    let out = run(&["validate-config", "--config", good.to_str().unwrap()]);
    assert_code(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("eps = -4.4"));

    let unknown = dir.join("unknown.toml");
    std::fs::write(&unknown, "surprise = 1\n").unwrap();
    assert_code(
        &run(&["validate-config", "--config", unknown.to_str().unwrap()]),
        1,
    );

    let bad_metric = dir.join("bad_metric.toml");
    std::fs::write(&bad_metric, "metric = \"pullback-naive\"\n").unwrap();
    assert_code(
        &run(&["validate-config", "--config", bad_metric.to_str().unwrap()]),
        1,
    );
}

#[test]
fn experiment_rejects_an_empty_grid() {
    let dir = tmp("empty-grid");
    let cfg = dir.join("cfg.toml");
    std::fs::write(&cfg, "r = []\n").unwrap();
    let out = run(&[
        "experiment",
        "--experiment",
        "misspec-table",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_code(&out, 1);
}
