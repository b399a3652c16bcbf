//! Analytic gradients, full-batch gradient descent, and the collapse metric
//! tracked during training.

use crate::model::{
    build_labels, forward_pass, init_state, loss_from_pass, reg_gate, Activation, ForwardPass,
    HyperConfig, LayerCache, ModelError, ModelState, RegGate,
};
use crate::numerics::{flatten, pinv, Matrix, PINV_DEFAULT_CUTOFF};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Invalid(#[from] ModelError),
    #[error("training diverged at epoch {epoch}: loss {loss:e} from initial {initial:e}")]
    Diverged { epoch: usize, loss: f64, initial: f64 },
}

/// Gradient of the full objective for every parameter block.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub d_h1: Matrix,
    /// `d_w[l-1]` matches `W_l`.
    pub d_w: Vec<Matrix>,
}

impl GradientSet {
    /// Euclidean norm over all parameter coordinates.
    pub fn norm(&self) -> f64 {
        let mut sum = self.d_h1.frobenius_dot(&self.d_h1);
        for g in &self.d_w {
            sum += g.frobenius_dot(g);
        }
        sum.sqrt()
    }
}

/// Exact gradient of the objective (fit term plus regularizers) by reverse
/// accumulation through the cached forward pass. In relu mode the mask
/// `1(h > 0)` gates the backward flow at every layer boundary except the
/// first, whose input is the raw `H1`.
pub fn gradients(state: &ModelState, pass: &ForwardPass, cfg: &HyperConfig) -> GradientSet {
    let l_total = cfg.layers;
    let kn = cfg.kn() as f64;
    let relu_mode = cfg.activation == Activation::Relu;

    // dL/dz, then walk the layers backwards.
    let mut delta = pass.residuals.scale(1.0 / kn);
    let mut d_w: Vec<Matrix> = vec![Matrix::zeros(1, 1); l_total];
    for l in (1..=l_total).rev() {
        let x = pass.input(l);
        let mut g = delta.matmul_transb(x);
        g.axpy(cfg.lambda_w[l - 1], state.weight(l));
        d_w[l - 1] = g;
        let mut back = state.weight(l).matmul_transa(&delta);
        if relu_mode && l >= 2 {
            let h = &pass.feats[l - 1];
            for (b, hv) in back.data_mut().iter_mut().zip(h.data()) {
                if *hv <= 0.0 {
                    *b = 0.0;
                }
            }
        }
        delta = back;
    }
    let mut d_h1 = delta;
    d_h1.axpy(cfg.lambda_h1, &state.h1);
    GradientSet { d_h1, d_w }
}

/// Spec surface: gradient from a full [`LayerCache`].
pub fn gradients_from_cache(state: &ModelState, cache: &LayerCache, cfg: &HyperConfig) -> GradientSet {
    gradients(state, &cache.pass, cfg)
}

/// The regularizer-free flattened layer-l gradient
/// `Av_ic { (A^(l+1)ᵀ u_ic) ⊗ x_ic^(l) }`, built from the cached tail
/// products rather than the backward recursion; the two routes agree to
/// rounding and are tested against each other.
pub fn gradient_update_term(cache: &LayerCache, l: usize) -> Matrix {
    assert!(l >= 1 && l <= cache.layers, "layer {l} out of range");
    let kn = cache.kn();
    let (rows, cols) = {
        let t = cache.tail(l + 1);
        (t.cols(), cache.input(l).rows())
    };
    let mut acc = Matrix::zeros(rows, cols);
    for ic in 0..kn {
        let tail = cache.sample_tail(ic, l + 1);
        let u = cache.residuals().col(ic);
        let x = cache.input(l).col(ic);
        // t = tailᵀ u, then acc += t xᵀ.
        for a in 0..rows {
            let mut t = 0.0;
            for r in 0..tail.rows() {
                t += tail.get(r, a) * u[r];
            }
            if t == 0.0 {
                continue;
            }
            let row = acc.row_mut(a);
            for (b, xv) in x.iter().enumerate() {
                row[b] += t * xv;
            }
        }
    }
    flatten(&acc.scale(1.0 / kn as f64))
}

/// Within/between-class scatter ratio `m = ‖Σ_W Σ_B⁺‖_F²` at layer `l`,
/// computed on the pre-activation features.
#[derive(Debug, Clone, Copy)]
pub struct DncMetric {
    pub m: f64,
    /// Between-class scatter vanished; `m = 0` by pseudoinverse convention.
    pub degenerate: bool,
}

pub fn dnc1_metric(cache: &LayerCache, l: usize) -> DncMetric {
    dnc1_from_features(cache.feat(l), cache.k, cache.n)
}

pub fn dnc1_from_features(features: &Matrix, k: usize, n: usize) -> DncMetric {
    let rows = features.rows();
    let kn = (k * n) as f64;
    let mut means = Matrix::zeros(rows, k);
    for c in 0..k {
        for i in 0..n {
            for r in 0..rows {
                means.set(r, c, means.get(r, c) + features.get(r, c * n + i));
            }
        }
    }
    means = means.scale(1.0 / n as f64);
    let global: Vec<f64> = (0..rows)
        .map(|r| (0..k).map(|c| means.get(r, c)).sum::<f64>() / k as f64)
        .collect();

    let mut sigma_w = Matrix::zeros(rows, rows);
    let mut dev = vec![0.0; rows];
    for c in 0..k {
        for i in 0..n {
            for r in 0..rows {
                dev[r] = features.get(r, c * n + i) - means.get(r, c);
            }
            sigma_w.add_outer(1.0 / kn, &dev);
        }
    }
    let mut sigma_b = Matrix::zeros(rows, rows);
    for c in 0..k {
        for r in 0..rows {
            dev[r] = means.get(r, c) - global[r];
        }
        sigma_b.add_outer(1.0 / k as f64, &dev);
    }

    let degenerate = sigma_b.max_abs() <= 1e-18 * sigma_w.max_abs().max(1.0);
    let m = if degenerate {
        0.0
    } else {
        let pb = pinv(&sigma_b, PINV_DEFAULT_CUTOFF).expect("scatter matrix is symmetric");
        let prod = sigma_w.matmul(&pb);
        let fro = prod.frobenius_norm();
        fro * fro
    };
    DncMetric { m, degenerate }
}

/// One evaluation row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecord {
    pub epoch: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// DNC1 metric per layer, index `l-1`.
    pub m: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub gate: RegGate,
    /// Epochs actually run (update steps applied).
    pub epochs_run: usize,
    pub converged: bool,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    /// Final DNC1 metric per layer, index `l-1`.
    pub final_m: Vec<f64>,
    /// Number of epochs whose loss exceeded the previous epoch's.
    pub loss_increase_events: usize,
}

impl TrainLog {
    /// Saddle guard: a layer with `m` above this is treated as non-collapsed
    /// and downstream theorem checks refuse to run on it.
    pub const COLLAPSE_THRESHOLD: f64 = 1e-3;

    pub fn collapsed_at(&self, l: usize) -> bool {
        self.final_m[l - 1] <= Self::COLLAPSE_THRESHOLD
    }
}

/// Full-batch gradient descent with a fixed step size, run until the
/// gradient norm reaches `grad_tol` or the epoch budget is spent.
pub fn train(cfg: &HyperConfig) -> Result<(ModelState, TrainLog), TrainError> {
    cfg.validate()?;
    let mut state = init_state(cfg);
    train_from(cfg, &mut state).map(|log| (state, log))
}

/// Descent from a caller-supplied state (used to resume from checkpoints).
pub fn train_from(cfg: &HyperConfig, state: &mut ModelState) -> Result<TrainLog, TrainError> {
    train_with(cfg, state, |_, _| {})
}

/// Descent with an observer called after every applied update with the
/// number of epochs completed; the experiment layer hangs checkpointing off
/// this without any I/O living here.
pub fn train_with(
    cfg: &HyperConfig,
    state: &mut ModelState,
    mut after_epoch: impl FnMut(usize, &ModelState),
) -> Result<TrainLog, TrainError> {
    let labels = build_labels(cfg.k, cfg.n);
    let gate = reg_gate(cfg);
    let mut records = Vec::new();
    let mut loss_increase_events = 0usize;
    let mut prev_loss = f64::INFINITY;
    let mut initial_loss = None;

    let mut epoch = 0usize;
    let (converged, final_pass) = loop {
        let pass = forward_pass(state, cfg, &labels);
        let current_loss = loss_from_pass(&pass, state, cfg);
        let initial = *initial_loss.get_or_insert(current_loss);
        if current_loss > 1e6 * initial.max(f64::MIN_POSITIVE) {
            return Err(TrainError::Diverged {
                epoch,
                loss: current_loss,
                initial,
            });
        }
        if current_loss > prev_loss {
            loss_increase_events += 1;
        }
        prev_loss = current_loss;

        let grads = gradients(state, &pass, cfg);
        let grad_norm = grads.norm();
        if epoch % cfg.eval_every == 0 {
            records.push(TrainRecord {
                epoch,
                loss: current_loss,
                grad_norm,
                m: metric_row(&pass, cfg),
            });
        }
        if grad_norm <= cfg.grad_tol {
            break (true, pass);
        }
        if epoch >= cfg.max_epochs {
            break (false, pass);
        }
        state.h1.axpy(-cfg.lr, &grads.d_h1);
        for (w, g) in state.weights.iter_mut().zip(&grads.d_w) {
            w.axpy(-cfg.lr, g);
        }
        epoch += 1;
        after_epoch(epoch, state);
    };

    let final_loss = loss_from_pass(&final_pass, state, cfg);
    let final_grads = gradients(state, &final_pass, cfg);
    let final_m = metric_row(&final_pass, cfg);
    let last = TrainRecord {
        epoch,
        loss: final_loss,
        grad_norm: final_grads.norm(),
        m: final_m.clone(),
    };
    if records.last() != Some(&last) {
        records.push(last);
    }
    Ok(TrainLog {
        records,
        gate,
        epochs_run: epoch,
        converged,
        final_loss,
        final_grad_norm: final_grads.norm(),
        final_m,
        loss_increase_events,
    })
}

fn metric_row(pass: &ForwardPass, cfg: &HyperConfig) -> Vec<f64> {
    (1..=cfg.layers)
        .map(|l| dnc1_from_features(&pass.feats[l - 1], cfg.k, cfg.n).m)
        .collect()
}
