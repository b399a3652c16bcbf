//! Shared helpers for the integration suites: finite-difference oracles and
//! scaled relative-error metrics. Everything here is independent of the
//! analytic gradient/Hessian paths it checks.

use ufmlab::model::{fit_loss, loss, HyperConfig, ModelState};
use ufmlab::numerics::Matrix;

/// Central-difference step for gradients.
pub const GRAD_STEP: f64 = 1e-5;
/// Central-difference step for Hessians (the objective is piecewise
/// quadratic in any single layer, so truncation vanishes and only roundoff
/// matters; the larger step keeps roundoff small).
pub const HESS_STEP: f64 = 1e-4;

/// Index into the concatenated parameter vector (H1 then W_1..W_L).
fn perturbed(state: &ModelState, idx: usize, delta: f64) -> ModelState {
    let mut s = state.clone();
    let mut offset = 0usize;
    let h_len = s.h1.data().len();
    if idx < h_len {
        s.h1.data_mut()[idx] += delta;
        return s;
    }
    offset += h_len;
    for w in s.weights.iter_mut() {
        let len = w.data().len();
        if idx < offset + len {
            w.data_mut()[idx - offset] += delta;
            return s;
        }
        offset += len;
    }
    panic!("parameter index {idx} out of range");
}

pub fn param_count(state: &ModelState) -> usize {
    state.h1.data().len() + state.weights.iter().map(|w| w.data().len()).sum::<usize>()
}

/// Central finite differences of the full objective over every parameter
/// coordinate.
pub fn fd_gradient(state: &ModelState, cfg: &HyperConfig) -> Vec<f64> {
    (0..param_count(state))
        .map(|i| {
            let plus = loss(&perturbed(state, i, GRAD_STEP), cfg);
            let minus = loss(&perturbed(state, i, -GRAD_STEP), cfg);
            (plus - minus) / (2.0 * GRAD_STEP)
        })
        .collect()
}

/// Flattens a gradient set in the same H1-then-weights order.
pub fn flatten_gradients(g: &ufmlab::training::GradientSet) -> Vec<f64> {
    let mut out = Vec::new();
    out.extend_from_slice(g.d_h1.data());
    for w in &g.d_w {
        out.extend_from_slice(w.data());
    }
    out
}

/// Finite-difference Hessian of the regularizer-free objective with respect
/// to the flattened weights of layer `l`, via the four-point cross formula.
pub fn fd_hessian(state: &ModelState, cfg: &HyperConfig, l: usize) -> Matrix {
    let before: usize = cfg.d * cfg.kn()
        + (1..l)
            .map(|m| {
                let (r, c) = cfg.weight_shape(m);
                r * c
            })
            .sum::<usize>();
    let (r, c) = cfg.weight_shape(l);
    let dim = r * c;
    let e = HESS_STEP;
    let mut h = Matrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let pp = fit_loss(&perturbed(&perturbed(state, before + i, e), before + j, e), cfg);
            let pm = fit_loss(&perturbed(&perturbed(state, before + i, e), before + j, -e), cfg);
            let mp = fit_loss(&perturbed(&perturbed(state, before + i, -e), before + j, e), cfg);
            let mm = fit_loss(
                &perturbed(&perturbed(state, before + i, -e), before + j, -e),
                cfg,
            );
            let v = (pp - pm - mp + mm) / (4.0 * e * e);
            h.set(i, j, v);
            h.set(j, i, v);
        }
    }
    h
}

/// A relu state is a valid finite-difference subject only when every masked
/// preactivation sits clear of the kink: an entry of `h^(l)` (l >= 2) within
/// the perturbation's reach of zero would flip its mask mid-stencil and the
/// quotient would no longer estimate a derivative of anything.
pub fn fd_safe(state: &ModelState, cfg: &HyperConfig, margin: f64) -> bool {
    if cfg.activation != ufmlab::model::Activation::Relu {
        return true;
    }
    let labels = ufmlab::model::build_labels(cfg.k, cfg.n);
    let pass = ufmlab::model::forward_pass(state, cfg, &labels);
    (2..=cfg.layers).all(|l| {
        pass.feats[l - 1]
            .data()
            .iter()
            .all(|h| h.abs() > margin)
    })
}

/// Max scaled relative coordinate error: each coordinate is measured
/// relative to itself, floored at 1e-3 of the vector's largest magnitude so
/// near-zero coordinates are judged at the scale finite differences can
/// actually resolve.
pub fn max_rel_error(got: &[f64], oracle: &[f64]) -> f64 {
    assert_eq!(got.len(), oracle.len());
    let scale = oracle.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = 1e-3 * scale.max(f64::MIN_POSITIVE);
    got.iter()
        .zip(oracle)
        .map(|(g, o)| (g - o).abs() / o.abs().max(floor))
        .fold(0.0, f64::max)
}

/// Max entry deviation relative to the matrix scale. Four-point
/// finite differences carry ~1e-8 absolute roundoff, so entries are
/// compared at the scale of the largest one.
pub fn max_rel_error_matrix(got: &[f64], oracle: &[f64]) -> f64 {
    assert_eq!(got.len(), oracle.len());
    let scale = oracle
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(f64::MIN_POSITIVE);
    got.iter()
        .zip(oracle)
        .map(|(g, o)| (g - o).abs() / scale)
        .fold(0.0, f64::max)
}
