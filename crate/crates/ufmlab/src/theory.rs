//! Closed-form spectral oracle for collapsed states.
//!
//! At a collapsed optimum the tail products align with the layer mean
//! matrices, `A^(l)ᵀ = α^(l) H̄^(l)`, and one scalar per layer then pins the
//! entire eigenstructure of every matrix family: Hessian, weight Gram,
//! gradient covariance, backpropagation moment, feature Gram, and the
//! gradient update direction itself. This module estimates those scalars
//! from a converged state by least squares and emits the predicted
//! eigenvalue multisets and eigenvector families for comparison against the
//! analysis module. Predictions in relu mode are conjectural: the closed
//! forms are only proven for the linear model.

use crate::analysis::SpectralSummary;
use crate::model::{Activation, HyperConfig, LayerCache};
use crate::numerics::{dot, fit_scale, norm2, NumericsError};
use crate::training::dnc1_metric;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("layer {l} out of range 1..={layers}")]
    LayerOutOfRange { l: usize, layers: usize },
    #[error("state not collapsed at layer {layer}: m = {m:e} (threshold {threshold:e})")]
    NotCollapsed { layer: usize, m: f64, threshold: f64 },
    #[error("regularization gate fails: lhs {lhs:e} >= rhs {rhs:e}; collapse not guaranteed")]
    RegGateFailed { lhs: f64, rhs: f64 },
    #[error("class means vanish at layer {layer}; trivial all-zero solution")]
    TrivialSolution { layer: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Collapse threshold above which constant estimation refuses to run.
pub const COLLAPSE_THRESHOLD: f64 = 1e-3;

/// Per-layer DNC constants estimated from a converged state.
#[derive(Debug, Clone, Copy)]
pub struct LayerConstants {
    /// Scale in `A^(l)ᵀ ≈ α H̄^(l)`.
    pub alpha: f64,
    /// Relative residual of that fit.
    pub fit_residual: f64,
    /// `β = α² ‖μ‖² - α`, the gradient coefficient (next-layer constants).
    pub beta: f64,
    /// `γ = α² ‖μ‖²`, the backpropagation-moment coefficient; `β = γ - α`.
    pub gamma: f64,
    /// Class-average of `‖μ_c‖` over the layer's feature means.
    pub mean_norm: f64,
    /// Relative spread `(max - min) / avg` of the per-class norms; equal
    /// norms are part of the collapse structure, so this is a diagnostic.
    pub mean_norm_spread: f64,
}

/// Predicted eigenvalue multisets and gradient direction for one probed
/// layer.
#[derive(Debug, Clone)]
pub struct TheoryPrediction {
    pub layer: usize,
    pub k: usize,
    pub n: usize,
    /// Set in relu mode: the closed forms are unproven there.
    pub conjectural: bool,
    /// Constants for the probed layer and the next one.
    pub here: LayerConstants,
    pub next: LayerConstants,
    /// Per-class norms of the layer-l input means (right Kronecker factor).
    pub input_mean_norms: Vec<f64>,
    /// Class-average of those, used in the eigenvalue formulas.
    pub input_mean_norm: f64,
    /// K² equal values `α² ‖μ^(l+1)‖² ‖μ^(l)‖² / K`.
    pub hessian_eigs: Vec<f64>,
    /// K equal values `(λ_{H1}/λ_{W_l}) n ‖μ^(1)‖²`.
    pub weight_gram_eigs: Vec<f64>,
    /// K-1 equal values `β² ‖μ^(l+1)‖² ‖μ^(l)‖² / K`.
    pub grad_cov_eigs: Vec<f64>,
    /// K-1 copies of `‖μ^(l)‖²(γ² + α²)` then one `‖μ^(l)‖²(γ - α)²`.
    pub backprop_eigs: Vec<f64>,
    /// K equal values `n ‖μ^(l)‖²`.
    pub feature_gram_eigs: Vec<f64>,
    /// Flattened `(β/K) Σ_c μ_c^(l+1) ⊗ μ_c^(l)`.
    pub gradient: Vec<f64>,
}

fn constants_at(cache: &LayerCache, m: usize) -> Result<LayerConstants, TheoryError> {
    let means = cache.feat_mean_matrix(m);
    if means.max_abs() == 0.0 {
        return Err(TheoryError::TrivialSolution { layer: m });
    }
    let tail_t = cache.tail(m).transpose();
    let fit = fit_scale(&tail_t, means)?;
    let norms: Vec<f64> = (0..cache.k).map(|c| norm2(&means.col(c))).collect();
    let mean_norm = norms.iter().sum::<f64>() / cache.k as f64;
    let (lo, hi) = norms
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let nsq = mean_norm * mean_norm;
    Ok(LayerConstants {
        alpha: fit.alpha,
        fit_residual: fit.residual,
        beta: fit.alpha * fit.alpha * nsq - fit.alpha,
        gamma: fit.alpha * fit.alpha * nsq,
        mean_norm,
        mean_norm_spread: if mean_norm > 0.0 { (hi - lo) / mean_norm } else { 0.0 },
    })
}

/// Estimates the DNC constants at layer `l` and emits the predicted spectra.
/// Refuses on non-collapsed states, a failing regularization gate, or an
/// all-zero solution, rather than emitting junk predictions.
pub fn estimate_constants(
    cache: &LayerCache,
    cfg: &HyperConfig,
    l: usize,
) -> Result<TheoryPrediction, TheoryError> {
    if l < 1 || l > cache.layers {
        return Err(TheoryError::LayerOutOfRange {
            l,
            layers: cache.layers,
        });
    }
    let gate = crate::model::reg_gate(cfg);
    if !gate.pass {
        return Err(TheoryError::RegGateFailed {
            lhs: gate.lhs,
            rhs: gate.rhs,
        });
    }
    let metric = dnc1_metric(cache, l);
    if metric.m > COLLAPSE_THRESHOLD {
        return Err(TheoryError::NotCollapsed {
            layer: l,
            m: metric.m,
            threshold: COLLAPSE_THRESHOLD,
        });
    }

    let here = constants_at(cache, l)?;
    let next = constants_at(cache, l + 1)?;
    let k = cache.k;
    let n = cache.n;

    let input_means = cache.input_mean_matrix(l);
    let input_mean_norms: Vec<f64> = (0..k).map(|c| norm2(&input_means.col(c))).collect();
    let input_mean_norm = input_mean_norms.iter().sum::<f64>() / k as f64;
    let layer1_norms: Vec<f64> = (0..k)
        .map(|c| norm2(&cache.input_mean_matrix(1).col(c)))
        .collect();
    let layer1_norm = layer1_norms.iter().sum::<f64>() / k as f64;

    let right_sq = input_mean_norm * input_mean_norm;
    let next_sq = next.mean_norm * next.mean_norm;
    let here_sq = here.mean_norm * here.mean_norm;

    let hessian_value = next.alpha * next.alpha * next_sq * right_sq / k as f64;
    let grad_cov_value = next.beta * next.beta * next_sq * right_sq / k as f64;
    let backprop_large = here_sq * (here.gamma * here.gamma + here.alpha * here.alpha);
    let backprop_small = here_sq * (here.gamma - here.alpha) * (here.gamma - here.alpha);
    let weight_gram_value =
        cfg.lambda_h1 / cfg.lambda_w[l - 1] * n as f64 * layer1_norm * layer1_norm;

    let mut gradient = vec![0.0; cache.tail(l + 1).cols() * input_means.rows()];
    for c in 0..k {
        let left = cache.feat_class_mean(l + 1, c);
        let right = input_means.col(c);
        let mut idx = 0;
        for lv in &left {
            for rv in &right {
                gradient[idx] += next.beta / k as f64 * lv * rv;
                idx += 1;
            }
        }
    }

    let mut backprop_eigs = vec![backprop_large; k - 1];
    backprop_eigs.push(backprop_small);

    Ok(TheoryPrediction {
        layer: l,
        k,
        n,
        conjectural: cache.activation == Activation::Relu,
        here,
        next,
        input_mean_norms,
        input_mean_norm,
        hessian_eigs: vec![hessian_value; k * k],
        weight_gram_eigs: vec![weight_gram_value; k],
        grad_cov_eigs: vec![grad_cov_value; k - 1],
        backprop_eigs,
        feature_gram_eigs: vec![n as f64 * right_sq; k],
        gradient,
    })
}

/// Matrix families with predicted eigenvector sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    Hessian,
    GClass,
    GCross,
    GradCov,
    Backprop,
}

/// Predicted (eigenvalue, unnormalized eigenvector) pairs for a family,
/// built from the cached class means.
pub fn predicted_eigvecs(
    prediction: &TheoryPrediction,
    cache: &LayerCache,
    family: Family,
) -> Vec<(f64, Vec<f64>)> {
    let l = prediction.layer;
    let k = prediction.k;
    let kron = |a: &[f64], b: &[f64]| {
        let mut v = Vec::with_capacity(a.len() * b.len());
        for x in a {
            for y in b {
                v.push(x * y);
            }
        }
        v
    };
    let left = |c: usize| cache.feat_class_mean(l + 1, c);
    let right = |c: usize| cache.input_class_mean(l, c);
    match family {
        Family::Hessian => {
            let mut out = Vec::with_capacity(k * k);
            for c in 0..k {
                for cp in 0..k {
                    out.push((prediction.hessian_eigs[0], kron(&left(c), &right(cp))));
                }
            }
            out
        }
        Family::GClass => {
            let g = cache.feat_global_mean(l + 1);
            (0..k)
                .map(|c| (prediction.hessian_eigs[0], kron(&g, &right(c))))
                .collect()
        }
        Family::GCross => {
            let mu1 = left(0);
            let mut out = Vec::with_capacity(k * (k - 1));
            for cp in 1..k {
                let diff: Vec<f64> = mu1.iter().zip(&left(cp)).map(|(a, b)| a - b).collect();
                for c in 0..k {
                    out.push((prediction.hessian_eigs[0], kron(&diff, &right(c))));
                }
            }
            out
        }
        Family::GradCov => {
            let first = kron(&left(0), &right(0));
            (1..k)
                .map(|c| {
                    let other = kron(&left(c), &right(c));
                    let v: Vec<f64> = first.iter().zip(&other).map(|(a, b)| a - b).collect();
                    (prediction.grad_cov_eigs[0], v)
                })
                .collect()
        }
        Family::Backprop => {
            let means = cache.feat_mean_matrix(l);
            let g = cache.feat_global_mean(l);
            let mut out: Vec<(f64, Vec<f64>)> = (1..k)
                .map(|c| {
                    let v: Vec<f64> =
                        means.col(c).iter().zip(&g).map(|(a, b)| a - b).collect();
                    (prediction.backprop_eigs[0], v)
                })
                .collect();
            out.push((*prediction.backprop_eigs.last().unwrap(), g));
            out
        }
    }
}

/// Per-eigenvalue comparison of a predicted multiset against an empirical
/// spectrum's leading values.
#[derive(Debug, Clone)]
pub struct SpectrumComparison {
    pub predicted: Vec<f64>,
    pub empirical: Vec<f64>,
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    pub count_matches: bool,
    pub pass: bool,
}

pub fn compare_spectrum(
    predicted: &[f64],
    empirical: &SpectralSummary,
    tol: f64,
) -> SpectrumComparison {
    let mut predicted = predicted.to_vec();
    predicted.sort_by(|a, b| b.partial_cmp(a).expect("finite prediction"));
    let count_matches = empirical.outlier_count == predicted.len();
    let empirical_vals: Vec<f64> = empirical
        .values
        .iter()
        .take(predicted.len())
        .copied()
        .collect();
    let relative_errors: Vec<f64> = predicted
        .iter()
        .zip(&empirical_vals)
        .map(|(p, e)| (p - e).abs() / p.abs().max(f64::MIN_POSITIVE))
        .collect();
    let max_relative_error = relative_errors.iter().fold(0.0f64, |m, x| m.max(*x));
    SpectrumComparison {
        pass: count_matches && max_relative_error <= tol,
        predicted,
        empirical: empirical_vals,
        relative_errors,
        max_relative_error,
        count_matches,
    }
}

/// For each empirical vector, the norm of its projection onto the span of
/// the predicted family.
pub fn span_projections(predicted: &[Vec<f64>], empirical: &[Vec<f64>]) -> Vec<f64> {
    // Orthonormalize the predicted span by modified Gram-Schmidt.
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in predicted {
        let mut w = v.clone();
        for _ in 0..2 {
            for q in &basis {
                let p = dot(&w, q);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= p * qi;
                }
            }
        }
        let n = norm2(&w);
        if n > 1e-13 * norm2(v).max(1.0) {
            for wi in w.iter_mut() {
                *wi /= n;
            }
            basis.push(w);
        }
    }
    empirical
        .iter()
        .map(|v| {
            let nv = norm2(v);
            if nv == 0.0 {
                return 0.0;
            }
            let mut sum = 0.0;
            for q in &basis {
                let p = dot(v, q) / nv;
                sum += p * p;
            }
            sum.min(1.0).sqrt()
        })
        .collect()
}
