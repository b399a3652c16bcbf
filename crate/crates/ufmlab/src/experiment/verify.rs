//! Pass/fail verification of the collapse-driven spectral structure on a
//! converged checkpoint.
//!
//! Checks marked informational never affect the verdict; they cover the
//! statements the linear theory makes but the relu model only approximates
//! (equality of the Hessian outliers, exact alignment values, closed-form
//! eigenvalues). Gates run first: a non-collapsed or trivially-zero state is
//! refused outright, since every downstream formula would be vacuous there.

use super::checkpoint::Checkpoint;
use super::config::ExperimentConfig;
use super::csvout::{fmt_f64, Csv};
use super::ExperimentError;
use crate::analysis::{
    backprop_error_moment, dense_spectral_summary, factored_spectral_summary, feature_gram,
    frame_diagnostics, gradient_alignment_empirical, gradient_alignment_natural,
    gradient_covariance_factors, hessian_alignment, hessian_spectrum, knockout_spectra,
    papyan_factors, weight_gram,
};
use crate::model::{forward, reg_gate, Activation, LayerCache};
use crate::numerics::{dot, norm2, SymFactors};
use crate::theory::{compare_spectrum, estimate_constants, predicted_eigvecs, span_projections, Family};
use crate::training::{dnc1_metric, gradient_update_term};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub layer: Option<usize>,
    /// Reported but excluded from the verdict.
    pub informational: bool,
    pub passed: bool,
    pub measured: f64,
    pub target: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_required_passed(&self) -> bool {
        self.checks
            .iter()
            .all(|c| c.informational || c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks
            .iter()
            .filter(|c| !c.informational && !c.passed)
            .collect()
    }

    pub fn find(&self, name: &str, layer: Option<usize>) -> Option<&CheckResult> {
        self.checks
            .iter()
            .find(|c| c.name == name && c.layer == layer)
    }

    pub fn to_csv(&self, config_hash: u64) -> String {
        let mut csv = Csv::new(
            config_hash,
            &["check", "layer", "status", "informational", "measured", "target", "detail"],
        );
        for c in &self.checks {
            csv.row(&[
                c.name.clone(),
                c.layer.map_or_else(|| "-".into(), |l| l.to_string()),
                if c.passed { "pass".into() } else { "fail".into() },
                (c.informational as u8).to_string(),
                fmt_f64(c.measured),
                fmt_f64(c.target),
                c.detail.clone(),
            ]);
        }
        csv.into_string()
    }
}

struct Verifier {
    report: VerifyReport,
    tol_scale: f64,
    relu: bool,
}

impl Verifier {
    /// `measured <= tol * tol_scale`; informational when `info_in_relu` and
    /// the run is relu.
    fn upper(&mut self, name: &str, layer: Option<usize>, measured: f64, tol: f64, info_in_relu: bool, detail: impl Into<String>) {
        let target = tol * self.tol_scale;
        self.push(name, layer, measured <= target, measured, target, info_in_relu, detail.into());
    }

    /// `measured >= threshold` (thresholds near 1 are not tol-scaled
    /// upwards, only relaxed: threshold' = 1 - (1-threshold)*scale).
    fn lower(&mut self, name: &str, layer: Option<usize>, measured: f64, threshold: f64, info_in_relu: bool, detail: impl Into<String>) {
        let target = 1.0 - (1.0 - threshold) * self.tol_scale;
        self.push(name, layer, measured >= target, measured, target, info_in_relu, detail.into());
    }

    fn count(&mut self, name: &str, layer: Option<usize>, got: usize, expected: usize, info_in_relu: bool, detail: impl Into<String>) {
        self.push(name, layer, got == expected, got as f64, expected as f64, info_in_relu, detail.into());
    }

    fn push(&mut self, name: &str, layer: Option<usize>, passed: bool, measured: f64, target: f64, info_in_relu: bool, detail: String) {
        self.report.checks.push(CheckResult {
            name: name.to_string(),
            layer,
            informational: info_in_relu && self.relu,
            passed,
            measured,
            target,
            detail,
        });
    }
}

/// Relative spread `(max - min) / mean` of a slice.
fn spread(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
    for v in values {
        lo = lo.min(*v);
        hi = hi.max(*v);
        sum += v;
    }
    let mean = sum / values.len() as f64;
    if mean == 0.0 {
        0.0
    } else {
        (hi - lo) / mean.abs()
    }
}

/// Gate failures: states on which the theorem checks refuse to run.
pub fn collapse_gate(cache: &LayerCache, cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    let gate = reg_gate(&cfg.hyper);
    if !gate.pass {
        return Err(ExperimentError::Refused {
            reason: format!(
                "regularization gate fails (lhs {} >= rhs {}); collapse not guaranteed",
                fmt_f64(gate.lhs),
                fmt_f64(gate.rhs)
            ),
        });
    }
    for &l in &cfg.probe_layers {
        let metric = dnc1_metric(cache, l);
        if metric.degenerate || cache.feat_mean_matrix(l).max_abs() < 1e-10 {
            return Err(ExperimentError::Refused {
                reason: format!(
                    "trivial solution at layer {l}: class means vanish (over-regularized or saddle)"
                ),
            });
        }
        if metric.m > crate::theory::COLLAPSE_THRESHOLD {
            return Err(ExperimentError::Refused {
                reason: format!(
                    "layer {l} not collapsed: m = {} > {}",
                    fmt_f64(metric.m),
                    fmt_f64(crate::theory::COLLAPSE_THRESHOLD)
                ),
            });
        }
    }
    Ok(())
}

/// Runs every theorem check on a checkpoint.
pub fn cmd_verify(
    ckpt: &Checkpoint,
    cfg: &ExperimentConfig,
) -> Result<VerifyReport, ExperimentError> {
    if ckpt.hyper != cfg.hyper {
        return Err(ExperimentError::HyperMismatch);
    }
    let cache = forward(&ckpt.state, &cfg.hyper);
    collapse_gate(&cache, cfg)?;
    let mut v = Verifier {
        report: VerifyReport::default(),
        tol_scale: cfg.tol_scale,
        relu: cfg.hyper.activation == Activation::Relu,
    };

    for &l in &cfg.probe_layers {
        verify_layer(&mut v, &cache, ckpt, cfg, l)?;
    }
    if cfg.hyper.activation == Activation::Linear {
        stationarity_checks(&mut v, ckpt, cfg);
    }
    Ok(v.report)
}

fn verify_layer(
    v: &mut Verifier,
    cache: &LayerCache,
    ckpt: &Checkpoint,
    cfg: &ExperimentConfig,
    l: usize,
) -> Result<(), ExperimentError> {
    let k = cfg.hyper.k;
    let rule = cfg.outlier_rule;
    let some_l = Some(l);

    let metric = dnc1_metric(cache, l);
    v.upper("dnc1_m", some_l, metric.m, 1e-6, true, "within/between scatter ratio");

    let pred = estimate_constants(cache, &cfg.hyper, l).map_err(|e| ExperimentError::Refused {
        reason: e.to_string(),
    })?;
    v.upper(
        "tail_mean_fit_residual",
        some_l,
        pred.here.fit_residual.max(pred.next.fit_residual),
        1e-2,
        true,
        "A^(l)T vs mean-matrix proportionality",
    );
    v.upper(
        "mean_norm_spread",
        some_l,
        pred.here.mean_norm_spread,
        1e-2,
        true,
        "per-class mean norms equalize",
    );

    // Hessian spectrum, outliers, and predicted eigenvectors.
    let hess_spec = hessian_spectrum(cache, l, rule, k * k)?;
    v.count(
        "hessian_outlier_count",
        some_l,
        hess_spec.outlier_count,
        k * k,
        false,
        "K^2 outliers separate from the bulk",
    );
    v.upper(
        "hessian_outlier_spread",
        some_l,
        spread(&hess_spec.values[..(k * k).min(hess_spec.values.len())]),
        1e-2,
        true,
        "outliers converge to a common value (linear only)",
    );
    let align = hessian_alignment(cache, l)?;
    v.lower(
        "hessian_alignment_min",
        some_l,
        align.min_defined().unwrap_or(0.0),
        0.999,
        true,
        "natural-basis vectors are eigenvectors",
    );
    let cmp = compare_spectrum(&pred.hessian_eigs, &hess_spec, 1e-2 * v.tol_scale);
    v.upper(
        "theory_hessian_match",
        some_l,
        cmp.max_relative_error,
        1e-2,
        true,
        "predicted vs empirical Hessian outliers",
    );
    if let Some(top) = &hess_spec.top_vectors {
        let family = predicted_eigvecs(&pred, cache, Family::Hessian);
        let span: Vec<Vec<f64>> = family.into_iter().map(|(_, vec)| vec).collect();
        let projections = span_projections(&span, top);
        let min_proj = projections.iter().copied().fold(f64::INFINITY, f64::min);
        v.lower(
            "theory_eigenspace_projection",
            some_l,
            min_proj,
            0.999,
            true,
            "empirical top eigenvectors lie in the predicted span",
        );
    }

    // Decomposition identity, knockouts, image orthogonality.
    let knock = knockout_spectra(cache, l, rule)?;
    v.upper(
        "decomposition_residual",
        some_l,
        knock.residual / knock.hessian_norm.max(f64::MIN_POSITIVE),
        1e-8,
        false,
        "class + cross + within reassembles the Hessian",
    );
    v.count("knockout_full_count", some_l, knock.full.outlier_count, k * k, false, "");
    v.count(
        "knockout_minus_class_count",
        some_l,
        knock.minus_class.outlier_count,
        k * (k - 1),
        false,
        "removing the class part deletes K outliers",
    );
    v.count(
        "knockout_minus_cross_count",
        some_l,
        knock.minus_cross.outlier_count,
        k,
        false,
        "removing the cross part deletes K(K-1) outliers",
    );
    v.count(
        "knockout_minus_within_count",
        some_l,
        knock.minus_within.outlier_count,
        k * k,
        false,
        "removing the within part leaves the outliers",
    );
    let top = knock.full.values[0].max(f64::MIN_POSITIVE);
    let within_change = knock
        .full
        .values
        .iter()
        .zip(&knock.minus_within.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    v.upper(
        "within_knockout_unchanged",
        some_l,
        within_change / top,
        1e-8,
        true,
        "within part vanishes at the optimum",
    );
    let parts = papyan_factors(cache, l)?;
    let class_norm = parts.class.frobenius_norm();
    let cross_norm = parts.cross.frobenius_norm();
    let ortho = SymFactors::product_frobenius_norm(&parts.class, &parts.cross)
        / (class_norm * cross_norm).max(f64::MIN_POSITIVE);
    v.upper(
        "images_orthogonal",
        some_l,
        ortho,
        1e-8,
        true,
        "class and cross images are orthogonal spaces",
    );

    // Gradient structure.
    let nat = gradient_alignment_natural(cache, l)?;
    let mut diag_dev = 0.0f64;
    let mut off_max = 0.0f64;
    for (c, cp, val) in nat.grid.iter() {
        let val = val.unwrap_or(0.0);
        if c == cp {
            diag_dev = diag_dev.max((val - 1.0 / k as f64).abs());
        } else {
            off_max = off_max.max(val);
        }
    }
    v.upper(
        "grad_natural_diag",
        some_l,
        diag_dev,
        1e-2,
        true,
        "K natural coefficients converge to 1/K",
    );
    v.upper(
        "grad_natural_off",
        some_l,
        off_max,
        1e-4,
        true,
        "cross coefficients vanish",
    );
    let emp = gradient_alignment_empirical(cache, l)?;
    let mut sorted = emp.coefficients.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite coefficients"));
    let support = sorted.iter().take_while(|c| **c > 1e-3).count();
    // In the linear model the K^2 nonzero eigenvalues are (near-)equal, so
    // individual eigenvectors inside that eigenspace are arbitrary and the
    // support count is informational there; the relu spectrum breaks the
    // degeneracy and makes this the paper-grade check.
    let info = !v.relu;
    v.push(
        "grad_empirical_support",
        some_l,
        support == k,
        support as f64,
        k as f64,
        info,
        "exactly K true-eigenvector coefficients carry the gradient".into(),
    );
    let tail = sorted.get(k).copied().unwrap_or(0.0).max(emp.residual_mass);
    v.push(
        "grad_empirical_tail",
        some_l,
        tail <= 1e-4 * v.tol_scale,
        tail,
        1e-4 * v.tol_scale,
        info,
        "remaining coefficients and null-space mass vanish".into(),
    );
    let g = gradient_update_term(cache, l);
    let gn = g.frobenius_norm();
    let pn = norm2(&pred.gradient);
    let cosine = if gn > 0.0 && pn > 0.0 {
        dot(g.data(), &pred.gradient) / (gn * pn)
    } else {
        0.0
    };
    v.lower(
        "gradient_form_cosine",
        some_l,
        cosine,
        0.999,
        true,
        "update term aligns with (beta/K) sum of mean products",
    );

    // Weight Gram.
    let wg_spec = dense_spectral_summary(&weight_gram(&ckpt.state, l), rule)?;
    v.count("weight_gram_count", some_l, wg_spec.outlier_count, k, false, "rank K weight Gram");
    let wg_tol = if v.relu { 5e-2 } else { 1e-2 };
    v.upper(
        "weight_gram_spread",
        some_l,
        spread(&wg_spec.values[..k.min(wg_spec.values.len())]),
        wg_tol,
        false,
        "top weight-Gram eigenvalues equalize",
    );
    let cmp = compare_spectrum(&pred.weight_gram_eigs, &wg_spec, 1e-2 * v.tol_scale);
    v.upper(
        "weight_gram_match",
        some_l,
        cmp.max_relative_error,
        1e-2,
        true,
        "eigenvalues equal (lambda_h1/lambda_w) n |mu|^2",
    );

    // Gradient covariance.
    let gc_spec = factored_spectral_summary(&gradient_covariance_factors(cache, l)?, rule, 0)?;
    v.count(
        "grad_cov_count",
        some_l,
        gc_spec.outlier_count,
        k - 1,
        true,
        "K-1 equal nonzero eigenvalues",
    );
    let cmp = compare_spectrum(&pred.grad_cov_eigs, &gc_spec, 1e-2 * v.tol_scale);
    v.upper(
        "grad_cov_match",
        some_l,
        cmp.max_relative_error,
        1e-2,
        true,
        "predicted gradient-covariance eigenvalue",
    );

    // Backpropagation-error second moment: rank exactly K with K-1 equal
    // values and one strictly smaller.
    let bp = dense_spectral_summary(&backprop_error_moment(cache, l)?, rule)?;
    let bp_top = bp.values[0].max(f64::MIN_POSITIVE);
    let bp_rank = bp.values.iter().take_while(|x| **x > 1e-9 * bp_top).count();
    v.count("backprop_rank", some_l, bp_rank, k, true, "rank exactly K");
    v.upper(
        "backprop_large_spread",
        some_l,
        spread(&bp.values[..(k - 1).min(bp.values.len())]),
        1e-2,
        true,
        "K-1 equal large eigenvalues",
    );
    let bp_large_err = bp.values[..(k - 1).min(bp.values.len())]
        .iter()
        .map(|e| (e - pred.backprop_eigs[0]).abs() / pred.backprop_eigs[0].abs().max(f64::MIN_POSITIVE))
        .fold(0.0f64, f64::max);
    v.upper("backprop_large_match", some_l, bp_large_err, 1e-2, true, "value (gamma^2 + alpha^2)|mu|^2");
    let small_pred = *pred.backprop_eigs.last().expect("k >= 2");
    let small_emp = bp.values.get(k - 1).copied().unwrap_or(0.0);
    let bp_small_err = (small_emp - small_pred).abs() / small_pred.abs().max(f64::MIN_POSITIVE);
    v.upper("backprop_small_match", some_l, bp_small_err, 1e-2, true, "value (gamma - alpha)^2 |mu|^2");
    if k >= 2 {
        v.push(
            "backprop_small_strictly_smaller",
            some_l,
            small_emp < bp.values[k - 2],
            small_emp / bp.values[k - 2].max(f64::MIN_POSITIVE),
            1.0,
            true,
            "lone eigenvalue sits below the repeated one".into(),
        );
    }

    // Feature Gram: K eigenvalues n |mu_c|^2 (per-class values).
    let fg_spec = dense_spectral_summary(&feature_gram(cache, l)?, rule)?;
    v.count("feature_gram_count", some_l, fg_spec.outlier_count, k, false, "rank K feature Gram");
    let mut fg_pred: Vec<f64> = pred
        .input_mean_norms
        .iter()
        .map(|nm| cfg.hyper.n as f64 * nm * nm)
        .collect();
    fg_pred.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    let fg_err = fg_pred
        .iter()
        .zip(&fg_spec.values)
        .map(|(p, e)| (p - e).abs() / p.abs().max(f64::MIN_POSITIVE))
        .fold(0.0f64, f64::max);
    v.upper("feature_gram_match", some_l, fg_err, 1e-3, true, "eigenvalues n |mu_c|^2");

    // Frame diagnostics on the tail products.
    let frames = frame_diagnostics(cache, l)?;
    let mut diag_min = f64::INFINITY;
    let mut off_max = 0.0f64;
    let mut diag = Vec::with_capacity(k);
    for c in 0..k {
        diag.push(frames.r.get(c, c));
        diag_min = diag_min.min(frames.r.get(c, c));
        for cp in 0..k {
            if c != cp {
                off_max = off_max.max(frames.r.get(c, cp));
            }
        }
    }
    v.upper(
        "frames_offdiag",
        some_l,
        off_max / diag_min.max(f64::MIN_POSITIVE),
        1e-4,
        true,
        "tail rows form an orthogonal frame",
    );
    v.upper("frames_diag_spread", some_l, spread(&diag), 1e-3, true, "frame rows share a norm");
    if let Some(rt) = &frames.r_tilde {
        let rt_diag: Vec<f64> = (0..k).map(|c| rt.get(c, c)).collect();
        v.push(
            "frames_r_tilde_diag_spread",
            some_l,
            true,
            spread(&rt_diag),
            f64::INFINITY,
            true,
            "masked-tail frame diagonal (reported, no equality claim)".into(),
        );
    }
    Ok(())
}

/// Balance relations between consecutive layers at a stationary point
/// (linear model): `lambda_l W_lᵀW_l = lambda_{l-1} W_{l-1}W_{l-1}ᵀ` and
/// `lambda_1 W_1ᵀW_1 = lambda_{H1} H_1 H_1ᵀ`.
fn stationarity_checks(v: &mut Verifier, ckpt: &Checkpoint, cfg: &ExperimentConfig) {
    let h = &cfg.hyper;
    let mut worst = 0.0f64;
    for l in 2..=h.layers {
        let left = weight_gram(&ckpt.state, l).scale(h.lambda_w[l - 1]);
        let wprev = ckpt.state.weight(l - 1);
        let right = wprev.matmul_transb(wprev).scale(h.lambda_w[l - 2]);
        let rel = left.sub(&right).frobenius_norm() / right.frobenius_norm().max(f64::MIN_POSITIVE);
        worst = worst.max(rel);
    }
    let left = weight_gram(&ckpt.state, 1).scale(h.lambda_w[0]);
    let right = ckpt
        .state
        .h1
        .matmul_transb(&ckpt.state.h1)
        .scale(h.lambda_h1);
    let rel = left.sub(&right).frobenius_norm() / right.frobenius_norm().max(f64::MIN_POSITIVE);
    worst = worst.max(rel);
    v.upper(
        "stationarity_balance",
        None,
        worst,
        1e-6,
        false,
        "layer Gram balance relations at the optimum",
    );
}
