//! Deep linear and deep ReLU unconstrained feature models.
//!
//! The optimisation variables are the free features `H1` (d x Kn) and the
//! separated layers `W_1..W_L` (d x d, final layer K x d). The forward map is
//!
//! ```text
//! z = W_L s(W_{L-1} s(... W_2 s(W_1 H_1) ...))
//! ```
//!
//! with `s` the identity (linear mode) or elementwise ReLU. Note the free
//! features enter layer 1 unrectified: the innermost product is `W_1 H_1`,
//! so the activation sits between layers only. The objective is the averaged
//! squared residual against the one-hot labels plus L2 penalties on every
//! parameter block.

use crate::numerics::{gaussian_matrix, Matrix, Rng};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid hyperparameter: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Linear => "linear",
            Activation::Relu => "relu",
        }
    }
}

/// Problem sizes, regularization strengths, and optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperConfig {
    pub k: usize,
    pub n: usize,
    pub d: usize,
    /// Number of separated layers L.
    pub layers: usize,
    pub lambda_h1: f64,
    /// One strength per layer, `lambda_w[l-1]` for `W_l`.
    pub lambda_w: Vec<f64>,
    pub activation: Activation,
    pub lr: f64,
    pub max_epochs: usize,
    pub grad_tol: f64,
    pub eval_every: usize,
    pub init_std: f64,
    pub seed: u64,
}

impl HyperConfig {
    /// Defaults for everything except the problem sizes; `init_std = 1/sqrt(d)`
    /// keeps pre-activation scales O(1) across depth.
    pub fn new(k: usize, n: usize, d: usize, layers: usize, activation: Activation) -> Self {
        Self {
            k,
            n,
            d,
            layers,
            lambda_h1: 5e-3,
            lambda_w: vec![5e-3; layers],
            activation,
            lr: 0.5,
            max_epochs: 100_000,
            grad_tol: 1e-10,
            eval_every: 1000,
            init_std: 1.0 / (d as f64).sqrt(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.k < 2 {
            return Err(ModelError::InvalidConfig(format!("k = {} < 2", self.k)));
        }
        if self.n < 1 {
            return Err(ModelError::InvalidConfig("n = 0".into()));
        }
        if self.layers < 1 {
            return Err(ModelError::InvalidConfig("layers = 0".into()));
        }
        if self.d < self.k {
            return Err(ModelError::InvalidConfig(format!(
                "d = {} < k = {}",
                self.d, self.k
            )));
        }
        if self.lambda_w.len() != self.layers {
            return Err(ModelError::InvalidConfig(format!(
                "lambda_w has {} entries for {} layers",
                self.lambda_w.len(),
                self.layers
            )));
        }
        if !(self.lambda_h1 > 0.0) || self.lambda_w.iter().any(|l| !(*l > 0.0)) {
            return Err(ModelError::InvalidConfig(
                "regularization strengths must be strictly positive".into(),
            ));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(ModelError::InvalidConfig("lr must be finite and >= 0".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(ModelError::InvalidConfig("grad_tol must be > 0".into()));
        }
        if self.eval_every == 0 {
            return Err(ModelError::InvalidConfig("eval_every must be >= 1".into()));
        }
        if !(self.init_std > 0.0) {
            return Err(ModelError::InvalidConfig("init_std must be > 0".into()));
        }
        Ok(())
    }

    pub fn kn(&self) -> usize {
        self.k * self.n
    }

    /// Shape of `W_l` (1-based layer index).
    pub fn weight_shape(&self, l: usize) -> (usize, usize) {
        assert!(l >= 1 && l <= self.layers);
        if l == self.layers {
            (self.k, self.d)
        } else {
            (self.d, self.d)
        }
    }
}

/// The optimisation variables.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub h1: Matrix,
    /// `weights[l-1]` is `W_l`.
    pub weights: Vec<Matrix>,
}

impl ModelState {
    pub fn weight(&self, l: usize) -> &Matrix {
        &self.weights[l - 1]
    }
}

/// One-hot block label matrix `Y = I_K kron 1_nᵀ` (K x Kn).
pub fn build_labels(k: usize, n: usize) -> Matrix {
    Matrix::from_fn(k, k * n, |c, q| if q / n == c { 1.0 } else { 0.0 })
}

/// Gaussian initialisation, drawn in the fixed order `H1, W_1, ..., W_L`
/// from the stream seeded by `cfg.seed`.
pub fn init_state(cfg: &HyperConfig) -> ModelState {
    let mut rng = Rng::new(cfg.seed);
    init_state_with(cfg, &mut rng)
}

/// Same as [`init_state`] but drawing from a caller-owned stream.
pub fn init_state_with(cfg: &HyperConfig, rng: &mut Rng) -> ModelState {
    let h1 = gaussian_matrix(rng, cfg.d, cfg.kn(), cfg.init_std);
    let weights = (1..=cfg.layers)
        .map(|l| {
            let (r, c) = cfg.weight_shape(l);
            gaussian_matrix(rng, r, c, cfg.init_std)
        })
        .collect();
    ModelState { h1, weights }
}

/// Forward quantities that the training loop needs every epoch: features,
/// layer inputs, and residuals. The full [`LayerCache`] adds means and tail
/// products on top.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `feats[l-1]` holds `h^(l)` for `l = 1..=L+1`; the last entry is the
    /// network output `z` (K x Kn).
    pub feats: Vec<Matrix>,
    /// `inputs[l-1]` is what `W_l` multiplies in relu mode: `h^(1)` for
    /// layer 1, the rectified features above. Empty in linear mode, where
    /// inputs and features coincide; use [`ForwardPass::input`].
    pub inputs: Vec<Matrix>,
    /// `u = z - Y` (K x Kn).
    pub residuals: Matrix,
}

impl ForwardPass {
    /// Layer input `x^(l)` for `l = 1..=L`.
    pub fn input(&self, l: usize) -> &Matrix {
        if self.inputs.is_empty() {
            &self.feats[l - 1]
        } else {
            &self.inputs[l - 1]
        }
    }
}

pub fn forward_pass(state: &ModelState, cfg: &HyperConfig, labels: &Matrix) -> ForwardPass {
    let l_total = cfg.layers;
    let mut feats: Vec<Matrix> = Vec::with_capacity(l_total + 1);
    let mut inputs: Vec<Matrix> = Vec::with_capacity(l_total);
    feats.push(state.h1.clone());
    for l in 1..=l_total {
        let next = if cfg.activation == Activation::Linear {
            state.weight(l).matmul(&feats[l - 1])
        } else {
            let x = if l == 1 {
                feats[0].clone()
            } else {
                relu(&feats[l - 1])
            };
            let next = state.weight(l).matmul(&x);
            inputs.push(x);
            next
        };
        feats.push(next);
    }
    let residuals = feats[l_total].sub(labels);
    ForwardPass {
        feats,
        inputs,
        residuals,
    }
}

fn relu(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for x in out.data_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    out
}

/// Forward quantities plus everything the analysis layer consumes: class and
/// global means per layer, tail products `A^(l)`, and (relu mode) the
/// per-sample masked tails.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub k: usize,
    pub n: usize,
    pub d: usize,
    pub layers: usize,
    pub activation: Activation,
    pub pass: ForwardPass,
    pub labels: Matrix,
    /// Class means of `h^(l)`, one d x K matrix per `l = 1..=L+1`
    /// (K x K for the output layer).
    feat_means: Vec<Matrix>,
    /// Class means of the layer inputs `x^(l)`, `l = 1..=L`.
    input_means: Vec<Matrix>,
    /// `tails[l-1] = A^(l) = W_L ... W_l`; `tails[L] = I_K`.
    tails: Vec<Matrix>,
    /// Per-sample masked tails `Ã_ic^(l)` in relu mode, indexed
    /// `[sample][l-1]`. `None` in linear mode where they equal `tails`.
    masked_tails: Option<Vec<Vec<Matrix>>>,
}

impl LayerCache {
    pub fn kn(&self) -> usize {
        self.k * self.n
    }

    /// Class of sample column `ic` (columns are grouped by class).
    pub fn class_of(&self, ic: usize) -> usize {
        ic / self.n
    }

    /// `h^(l)` for `l = 1..=L+1`.
    pub fn feat(&self, l: usize) -> &Matrix {
        &self.pass.feats[l - 1]
    }

    /// Layer input `x^(l)` for `l = 1..=L`.
    pub fn input(&self, l: usize) -> &Matrix {
        self.pass.input(l)
    }

    pub fn outputs(&self) -> &Matrix {
        &self.pass.feats[self.layers]
    }

    pub fn residuals(&self) -> &Matrix {
        &self.pass.residuals
    }

    /// Class-mean matrix of `h^(l)` (columns are classes), `l = 1..=L+1`.
    pub fn feat_mean_matrix(&self, l: usize) -> &Matrix {
        &self.feat_means[l - 1]
    }

    pub fn feat_class_mean(&self, l: usize, c: usize) -> Vec<f64> {
        self.feat_means[l - 1].col(c)
    }

    pub fn feat_global_mean(&self, l: usize) -> Vec<f64> {
        let m = &self.feat_means[l - 1];
        (0..m.rows())
            .map(|i| (0..self.k).map(|c| m.get(i, c)).sum::<f64>() / self.k as f64)
            .collect()
    }

    /// Class-mean matrix of the layer input `x^(l)`, `l = 1..=L`.
    pub fn input_mean_matrix(&self, l: usize) -> &Matrix {
        &self.input_means[l - 1]
    }

    pub fn input_class_mean(&self, l: usize, c: usize) -> Vec<f64> {
        self.input_means[l - 1].col(c)
    }

    /// Raw tail product `A^(l) = W_L ... W_l`, `l = 1..=L+1` with the
    /// empty-product convention `A^(L+1) = I_K`.
    pub fn tail(&self, l: usize) -> &Matrix {
        &self.tails[l - 1]
    }

    /// Per-sample tail: masked `Ã_ic^(l)` in relu mode, the shared `A^(l)`
    /// in linear mode.
    pub fn sample_tail(&self, ic: usize, l: usize) -> &Matrix {
        match &self.masked_tails {
            Some(per_sample) => &per_sample[ic][l - 1],
            None => &self.tails[l - 1],
        }
    }
}

/// Full forward pass with cached layer quantities.
pub fn forward(state: &ModelState, cfg: &HyperConfig) -> LayerCache {
    let labels = build_labels(cfg.k, cfg.n);
    let pass = forward_pass(state, cfg, &labels);
    let l_total = cfg.layers;

    let feat_means = (0..=l_total)
        .map(|idx| class_means(&pass.feats[idx], cfg.k, cfg.n))
        .collect();
    let input_means = (1..=l_total)
        .map(|l| class_means(pass.input(l), cfg.k, cfg.n))
        .collect();

    // A^(L+1) = I_K, then A^(l) = A^(l+1) W_l downwards.
    let mut tails = vec![Matrix::identity(cfg.k); l_total + 1];
    for l in (1..=l_total).rev() {
        tails[l - 1] = tails[l].matmul(state.weight(l));
    }

    let masked_tails = match cfg.activation {
        Activation::Linear => None,
        Activation::Relu => {
            let kn = cfg.kn();
            let mut per_sample = Vec::with_capacity(kn);
            for ic in 0..kn {
                let mut sample = vec![Matrix::identity(cfg.k); l_total + 1];
                for l in (1..=l_total).rev() {
                    let mut t = sample[l].matmul(state.weight(l));
                    // Column y of W_l is live only where the incoming
                    // pre-activation is positive; layer 1 consumes the raw
                    // free features, so it carries no mask.
                    if l >= 2 {
                        let h = &pass.feats[l - 1];
                        for y in 0..t.cols() {
                            if h.get(y, ic) <= 0.0 {
                                for r in 0..t.rows() {
                                    t.set(r, y, 0.0);
                                }
                            }
                        }
                    }
                    sample[l - 1] = t;
                }
                per_sample.push(sample);
            }
            Some(per_sample)
        }
    };

    LayerCache {
        k: cfg.k,
        n: cfg.n,
        d: cfg.d,
        layers: l_total,
        activation: cfg.activation,
        pass,
        labels,
        feat_means,
        input_means,
        tails,
        masked_tails,
    }
}

fn class_means(features: &Matrix, k: usize, n: usize) -> Matrix {
    let rows = features.rows();
    let mut means = Matrix::zeros(rows, k);
    for c in 0..k {
        for i in 0..n {
            let col = c * n + i;
            for r in 0..rows {
                means.set(r, c, means.get(r, c) + features.get(r, col));
            }
        }
    }
    means.scale(1.0 / n as f64)
}

/// Total objective: averaged squared residual plus all L2 penalties.
pub fn loss(state: &ModelState, cfg: &HyperConfig) -> f64 {
    let labels = build_labels(cfg.k, cfg.n);
    let pass = forward_pass(state, cfg, &labels);
    loss_from_pass(&pass, state, cfg)
}

pub fn loss_from_pass(pass: &ForwardPass, state: &ModelState, cfg: &HyperConfig) -> f64 {
    fit_loss_from_residuals(&pass.residuals, cfg) + regularizer(state, cfg)
}

/// The data-fit term alone: `‖z - Y‖_F² / (2Kn)`.
pub fn fit_loss(state: &ModelState, cfg: &HyperConfig) -> f64 {
    let labels = build_labels(cfg.k, cfg.n);
    let pass = forward_pass(state, cfg, &labels);
    fit_loss_from_residuals(&pass.residuals, cfg)
}

fn fit_loss_from_residuals(residuals: &Matrix, cfg: &HyperConfig) -> f64 {
    let fro = residuals.frobenius_norm();
    fro * fro / (2.0 * cfg.kn() as f64)
}

pub fn regularizer(state: &ModelState, cfg: &HyperConfig) -> f64 {
    let mut reg = 0.5 * cfg.lambda_h1 * state.h1.frobenius_dot(&state.h1);
    for l in 1..=cfg.layers {
        let w = state.weight(l);
        reg += 0.5 * cfg.lambda_w[l - 1] * w.frobenius_dot(w);
    }
    reg
}

/// Verdict of the regularization gate: collapse is only guaranteed when the
/// geometric-mean strength sits strictly below the depth-dependent threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegGate {
    pub pass: bool,
    pub lhs: f64,
    pub rhs: f64,
}

/// Evaluates `(Kn λ_{W_L} ... λ_{W_1} λ_{H_1})^{1/L} < (L-1)^{(L-1)/L} / (K L²)`.
pub fn reg_gate(cfg: &HyperConfig) -> RegGate {
    let l = cfg.layers as f64;
    // Log-domain product to dodge underflow for tiny strengths.
    let mut log_prod = (cfg.kn() as f64).ln() + cfg.lambda_h1.ln();
    for lam in &cfg.lambda_w {
        log_prod += lam.ln();
    }
    let lhs = (log_prod / l).exp();
    let rhs = (l - 1.0).powf((l - 1.0) / l) / (cfg.k as f64 * l * l);
    RegGate {
        pass: lhs < rhs,
        lhs,
        rhs,
    }
}
