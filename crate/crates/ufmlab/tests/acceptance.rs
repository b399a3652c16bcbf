//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! The paper-scale linear and relu pipelines (train, analyze, verify) run
//! once each and are shared across criteria through `OnceLock`.

mod common;

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;
use ufmlab::analysis::{hessian_layer, papyan_components};
use ufmlab::experiment::{
    cmd_analyze, cmd_train, cmd_verify, Checkpoint, ExperimentConfig, VerifyReport,
};
use ufmlab::model::{forward, init_state, Activation, HyperConfig};
use ufmlab::training::{gradients_from_cache, TrainLog};

const LINEAR_CFG: &str = include_str!("../../../configs/linear_k3_d60.cfg");
const RELU_CFG: &str = include_str!("../../../configs/relu_k3_d65.cfg");

struct PaperRun {
    out_dir: PathBuf,
    log: TrainLog,
    report: VerifyReport,
}

fn pipeline(cfg_text: &str, dir: PathBuf) -> PaperRun {
    let mut cfg = ExperimentConfig::parse(cfg_text).expect("embedded config parses");
    cfg.output_dir = dir.clone();
    let t = Instant::now();
    let out = cmd_train(&cfg).expect("training runs");
    let ckpt = Checkpoint::load(&out.final_checkpoint).expect("checkpoint loads");
    cmd_analyze(&ckpt, &cfg).expect("analysis runs");
    let report = cmd_verify(&ckpt, &cfg).expect("state collapses; verification runs");
    std::fs::write(dir.join("verify_report.csv"), report.to_csv(cfg.hash())).unwrap();
    eprintln!(
        "[acceptance] pipeline {} finished in {:.1?} ({} epochs, converged={})",
        dir.display(),
        t.elapsed(),
        out.log.epochs_run,
        out.log.converged
    );
    PaperRun {
        out_dir: dir,
        log: out.log,
        report,
    }
}

fn scratch(tag: &str) -> PathBuf {
    std::env::temp_dir().join(format!("ufmlab-acceptance-{tag}-{}", std::process::id()))
}

fn linear_run() -> &'static PaperRun {
    static RUN: OnceLock<PaperRun> = OnceLock::new();
    RUN.get_or_init(|| pipeline(LINEAR_CFG, scratch("linear")))
}

fn relu_run() -> &'static PaperRun {
    static RUN: OnceLock<PaperRun> = OnceLock::new();
    RUN.get_or_init(|| pipeline(RELU_CFG, scratch("relu")))
}

/// Asserts the named report checks passed, with one printed verdict line.
fn assert_checks(criterion: &str, report: &VerifyReport, layer: usize, names: &[&str]) {
    let mut failed = Vec::new();
    for name in names {
        let layer_key = if *name == "stationarity_balance" {
            None
        } else {
            Some(layer)
        };
        let check = report
            .find(name, layer_key)
            .unwrap_or_else(|| panic!("check {name} missing from report"));
        if !check.passed {
            failed.push(format!(
                "{name} (measured {:.3e}, target {:.3e})",
                check.measured, check.target
            ));
        }
    }
    let ok = failed.is_empty();
    println!(
        "[acceptance] {criterion}: {}",
        if ok { "PASS".to_string() } else { format!("FAIL — {}", failed.join("; ")) }
    );
    assert!(ok, "{criterion} failed: {}", failed.join("; "));
}

fn small_cfg(activation: Activation, seed: u64) -> HyperConfig {
    let mut cfg = HyperConfig::new(2, 3, 4, 3, activation);
    cfg.lambda_h1 = 2e-3;
    cfg.lambda_w = vec![3e-3, 2e-3, 1e-3];
    cfg.seed = seed;
    cfg
}

#[test]
fn criterion_1_gradient_and_hessian_oracle() {
    let t = Instant::now();
    let mut worst_grad = 0.0f64;
    let mut worst_hess = 0.0f64;
    for activation in [Activation::Linear, Activation::Relu] {
        // First ten seeds (in order) whose states are valid FD subjects;
        // relu states with a preactivation inside the stencil's reach of the
        // kink are skipped, since the quotient is no derivative there.
        let seeds: Vec<u64> = (0..)
            .filter(|seed| {
                let cfg = small_cfg(activation, *seed);
                common::fd_safe(&init_state(&cfg), &cfg, 20.0 * common::HESS_STEP)
            })
            .take(10)
            .collect();
        for &seed in &seeds {
            let cfg = small_cfg(activation, seed);
            let state = init_state(&cfg);
            let cache = forward(&state, &cfg);
            let analytic = common::flatten_gradients(&gradients_from_cache(&state, &cache, &cfg));
            let fd = common::fd_gradient(&state, &cfg);
            let grad_err = common::max_rel_error(&analytic, &fd);
            worst_grad = worst_grad.max(grad_err);
            assert!(
                grad_err <= 1e-6,
                "{activation:?} seed {seed}: gradient error {grad_err:e}"
            );
            for l in 1..=cfg.layers {
                let analytic = hessian_layer(&cache, l).unwrap();
                let fd = common::fd_hessian(&state, &cfg, l);
                let err = common::max_rel_error_matrix(analytic.data(), fd.data());
                worst_hess = worst_hess.max(err);
                assert!(
                    err <= 1e-5,
                    "{activation:?} seed {seed} layer {l}: hessian error {err:e}"
                );
            }
        }
    }
    println!(
        "[acceptance] criterion 1 (finite-difference oracle, 10 seeds x 2 modes): PASS \
         (max grad err {worst_grad:.2e}, max hessian err {worst_hess:.2e}, {:.1?})",
        t.elapsed()
    );
}

#[test]
fn criterion_2_decomposition_identity() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for activation in [Activation::Linear, Activation::Relu] {
        for seed in 100..110 {
            let cfg = small_cfg(activation, seed);
            let state = init_state(&cfg);
            let cache = forward(&state, &cfg);
            for l in 1..=cfg.layers {
                let hess = hessian_layer(&cache, l).unwrap();
                let (class, cross, within) = papyan_components(&cache, l).unwrap();
                let sum = class.add(&cross).add(&within);
                let rel = sum.sub(&hess).frobenius_norm() / hess.frobenius_norm();
                worst = worst.max(rel);
                assert!(
                    rel <= 1e-10,
                    "{activation:?} seed {seed} layer {l}: residual {rel:e}"
                );
            }
        }
    }
    println!(
        "[acceptance] criterion 2 (decomposition identity, 10 states x 2 modes): PASS \
         (max relative residual {worst:.2e}, {:.1?})",
        t.elapsed()
    );
}

#[test]
fn criterion_3_linear_paper_run() {
    let run = linear_run();
    let l = 3usize;
    assert!(
        run.log.converged,
        "linear run must reach the gradient tolerance"
    );
    let m = run.log.final_m[l - 1];
    println!(
        "[acceptance] criterion 3a (collapse m = {m:.2e} <= 1e-6): {}",
        if m <= 1e-6 { "PASS" } else { "FAIL" }
    );
    assert!(m <= 1e-6);
    assert_checks(
        "criterion 3b (K^2 equal Hessian outliers)",
        &run.report,
        l,
        &["hessian_outlier_count", "hessian_outlier_spread"],
    );
    assert_checks(
        "criterion 3c (alignment of natural eigenvectors)",
        &run.report,
        l,
        &["hessian_alignment_min"],
    );
    assert_checks(
        "criterion 3d (knockout counts and exact decomposition)",
        &run.report,
        l,
        &[
            "decomposition_residual",
            "knockout_full_count",
            "knockout_minus_class_count",
            "knockout_minus_cross_count",
            "knockout_minus_within_count",
            "within_knockout_unchanged",
            "images_orthogonal",
        ],
    );
    assert_checks(
        "criterion 3e (gradient natural coefficients 1/K)",
        &run.report,
        l,
        &["grad_natural_diag", "grad_natural_off"],
    );
    assert_checks(
        "criterion 3f (weight Gram outliers)",
        &run.report,
        l,
        &["weight_gram_count", "weight_gram_spread", "weight_gram_match"],
    );
    assert_checks(
        "criterion 3g (gradient covariance outliers)",
        &run.report,
        l,
        &["grad_cov_count", "grad_cov_match"],
    );
    assert_checks(
        "criterion 3h (backpropagation moment rank and values)",
        &run.report,
        l,
        &[
            "backprop_rank",
            "backprop_large_spread",
            "backprop_large_match",
            "backprop_small_match",
            "backprop_small_strictly_smaller",
        ],
    );
    assert_checks(
        "criterion 3i (feature Gram eigenvalues)",
        &run.report,
        l,
        &["feature_gram_count", "feature_gram_match"],
    );
    assert_checks(
        "criterion 3j (orthogonal frame diagnostics)",
        &run.report,
        l,
        &["frames_offdiag"],
    );
    assert_checks(
        "criterion 3 (stationarity balance relations)",
        &run.report,
        l,
        &["stationarity_balance"],
    );
}

#[test]
fn criterion_4_relu_paper_run() {
    let run = relu_run();
    let l = 4usize;
    let m = run.log.final_m[l - 1];
    println!("[acceptance] criterion 4 collapse at l=4: m = {m:.2e}");
    assert_checks(
        "criterion 4 (relu: K^2 Hessian outliers separate)",
        &run.report,
        l,
        &["hessian_outlier_count"],
    );
    assert_checks(
        "criterion 4 (relu: knockout counts)",
        &run.report,
        l,
        &[
            "knockout_full_count",
            "knockout_minus_class_count",
            "knockout_minus_cross_count",
            "knockout_minus_within_count",
            "decomposition_residual",
        ],
    );
    assert_checks(
        "criterion 4 (relu: K true-eigenvector gradient coefficients)",
        &run.report,
        l,
        &["grad_empirical_support", "grad_empirical_tail"],
    );
    assert_checks(
        "criterion 4 (relu: weight Gram top-K equal within 5e-2)",
        &run.report,
        l,
        &["weight_gram_count", "weight_gram_spread"],
    );
    // Equality of the K^2 Hessian outliers is reported, not asserted: the
    // relu model is not observed to reach it.
    let spread = run
        .report
        .find("hessian_outlier_spread", Some(l))
        .expect("spread reported");
    println!(
        "[acceptance] criterion 4 (relu: outlier equality informational): spread = {:.3e}",
        spread.measured
    );
}

#[test]
fn criterion_5_theory_oracle_agreement() {
    let run = linear_run();
    assert_checks(
        "criterion 5 (predicted spectra within 1e-2; eigenspace projection)",
        &run.report,
        3,
        &[
            "theory_hessian_match",
            "theory_eigenspace_projection",
            "weight_gram_match",
            "grad_cov_match",
            "backprop_large_match",
            "backprop_small_match",
            "feature_gram_match",
            "tail_mean_fit_residual",
        ],
    );
}

#[test]
fn criterion_6_deterministic_pipeline() {
    let first = linear_run();
    let second = pipeline(LINEAR_CFG, scratch("linear-repeat"));
    let mut names: Vec<String> = std::fs::read_dir(&first.out_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    let mut compared = 0usize;
    for name in &names {
        let a = std::fs::read(first.out_dir.join(name)).unwrap();
        let b = std::fs::read(second.out_dir.join(name))
            .unwrap_or_else(|_| panic!("{name} missing from repeat run"));
        assert_eq!(a, b, "{name} differs between identical pipelines");
        compared += 1;
    }
    assert_eq!(first.log.records, second.log.records);
    println!(
        "[acceptance] criterion 6 (byte-identical pipeline repeat): PASS ({compared} files compared)"
    );
}
