//! Builders for the layer-wise matrices, in dense and factored form.
//!
//! The common building block is the per-tuple vector
//! `v_icc' = a_icc'^(l+1) ⊗ x_ic^(l)`, the derivative of output coordinate
//! c' of sample ic with respect to the flattened layer-l weights. Row-major
//! flattening with stride equal to the column count makes every formula here
//! an exact Kronecker statement.

use super::AnalysisError;
use crate::model::{Activation, LayerCache, ModelState};
use crate::numerics::{kron_axpy, Matrix, SymFactors};

fn check_layer(cache: &LayerCache, l: usize) -> Result<(), AnalysisError> {
    if l < 1 || l > cache.layers {
        Err(AnalysisError::LayerOutOfRange {
            l,
            layers: cache.layers,
        })
    } else {
        Ok(())
    }
}

/// `v_icc' = (row c' of the sample's tail at l+1) ⊗ x_ic^(l)`.
fn tuple_vector(cache: &LayerCache, l: usize, ic: usize, cp: usize) -> Vec<f64> {
    let tail = cache.sample_tail(ic, l + 1);
    let x = cache.input(l);
    let cols = tail.cols();
    let mut v = Vec::with_capacity(cols * x.rows());
    for a in 0..cols {
        let t = tail.get(cp, a);
        for r in 0..x.rows() {
            v.push(t * x.get(r, ic));
        }
    }
    v
}

fn flat_dim(cache: &LayerCache, l: usize) -> usize {
    cache.tail(l + 1).cols() * cache.input(l).rows()
}

/// Layer-l Hessian of the regularizer-free objective, as a factored sum over
/// the (ic, c') tuples with weight 1/Kn.
pub fn hessian_factors(cache: &LayerCache, l: usize) -> Result<SymFactors, AnalysisError> {
    check_layer(cache, l)?;
    let kn = cache.kn();
    let w = 1.0 / kn as f64;
    let mut f = SymFactors::new(flat_dim(cache, l));
    for ic in 0..kn {
        for cp in 0..cache.k {
            f.push(w, tuple_vector(cache, l, ic, cp));
        }
    }
    Ok(f)
}

/// Dense layer-l Hessian: `Av_ic { (Ã_ic^(l+1)ᵀ Ã_ic^(l+1)) ⊗ x_ic x_icᵀ }`,
/// which collapses to a single Kronecker product in linear mode.
pub fn hessian_layer(cache: &LayerCache, l: usize) -> Result<Matrix, AnalysisError> {
    check_layer(cache, l)?;
    let kn = cache.kn();
    let x = cache.input(l);
    match cache.activation {
        Activation::Linear => {
            let tail = cache.tail(l + 1);
            let gram = tail.matmul_transa(tail);
            let second = x.matmul_transb(x).scale(1.0 / kn as f64);
            Ok(crate::numerics::kron(&gram, &second)?)
        }
        Activation::Relu => {
            let dim = flat_dim(cache, l);
            let mut out = Matrix::zeros(dim, dim);
            let w = 1.0 / kn as f64;
            for ic in 0..kn {
                let tail = cache.sample_tail(ic, l + 1);
                let gram = tail.matmul_transa(tail);
                let xc = x.col(ic);
                let mut outer = Matrix::zeros(xc.len(), xc.len());
                outer.add_outer(1.0, &xc);
                kron_axpy(&mut out, w, &gram, &outer);
            }
            Ok(out)
        }
    }
}

/// The class/cross/within split of the tuple second moment, in factored form.
pub struct PapyanFactors {
    pub class: SymFactors,
    pub cross: SymFactors,
    pub within: SymFactors,
}

pub fn papyan_factors(cache: &LayerCache, l: usize) -> Result<PapyanFactors, AnalysisError> {
    check_layer(cache, l)?;
    let (k, n) = (cache.k, cache.n);
    let dim = flat_dim(cache, l);
    let mut class = SymFactors::new(dim);
    let mut cross = SymFactors::new(dim);
    let mut within = SymFactors::new(dim);

    for c in 0..k {
        // v_cc' = Av_i v_icc', then v_c = Av_c' v_cc'.
        let mut v_cc: Vec<Vec<f64>> = Vec::with_capacity(k);
        for cp in 0..k {
            let mut mean = vec![0.0; dim];
            for i in 0..n {
                let v = tuple_vector(cache, l, c * n + i, cp);
                for (m, x) in mean.iter_mut().zip(&v) {
                    *m += x / n as f64;
                }
            }
            v_cc.push(mean);
        }
        let mut v_c = vec![0.0; dim];
        for vc in &v_cc {
            for (m, x) in v_c.iter_mut().zip(vc) {
                *m += x / k as f64;
            }
        }
        class.push(1.0, v_c.clone());
        for cp in 0..k {
            let dev: Vec<f64> = v_cc[cp].iter().zip(&v_c).map(|(a, b)| a - b).collect();
            cross.push(1.0 / k as f64, dev);
            for i in 0..n {
                let v = tuple_vector(cache, l, c * n + i, cp);
                let dev: Vec<f64> = v.iter().zip(&v_cc[cp]).map(|(a, b)| a - b).collect();
                within.push(1.0 / (k * n) as f64, dev);
            }
        }
    }
    Ok(PapyanFactors {
        class,
        cross,
        within,
    })
}

/// Dense decomposition components; their sum equals [`hessian_layer`] at any
/// parameter point (law of total second moment over the tuple indices).
pub fn papyan_components(
    cache: &LayerCache,
    l: usize,
) -> Result<(Matrix, Matrix, Matrix), AnalysisError> {
    let f = papyan_factors(cache, l)?;
    Ok((f.class.to_dense(), f.cross.to_dense(), f.within.to_dense()))
}

/// Covariance of the per-sample regularizer-free gradients, factored.
pub fn gradient_covariance_factors(
    cache: &LayerCache,
    l: usize,
) -> Result<SymFactors, AnalysisError> {
    check_layer(cache, l)?;
    let kn = cache.kn();
    let dim = flat_dim(cache, l);
    // g_ic = (tailᵀ u_ic) ⊗ x_ic.
    let mut grads: Vec<Vec<f64>> = Vec::with_capacity(kn);
    let mut mean = vec![0.0; dim];
    for ic in 0..kn {
        let tail = cache.sample_tail(ic, l + 1);
        let u = cache.residuals().col(ic);
        let x = cache.input(l).col(ic);
        let mut g = Vec::with_capacity(dim);
        for a in 0..tail.cols() {
            let mut t = 0.0;
            for r in 0..tail.rows() {
                t += tail.get(r, a) * u[r];
            }
            for xv in &x {
                g.push(t * xv);
            }
        }
        for (m, v) in mean.iter_mut().zip(&g) {
            *m += v / kn as f64;
        }
        grads.push(g);
    }
    let mut f = SymFactors::new(dim);
    for g in grads {
        let dev: Vec<f64> = g.iter().zip(&mean).map(|(a, b)| a - b).collect();
        f.push(1.0 / kn as f64, dev);
    }
    Ok(f)
}

pub fn gradient_covariance(cache: &LayerCache, l: usize) -> Result<Matrix, AnalysisError> {
    Ok(gradient_covariance_factors(cache, l)?.to_dense())
}

/// Weighted second moment of the extended backpropagation errors
/// `δ_icc' = A^(l)ᵀ (z_ic - y_c')`, a d x d matrix.
pub fn backprop_error_moment(cache: &LayerCache, l: usize) -> Result<Matrix, AnalysisError> {
    check_layer(cache, l)?;
    let kn = cache.kn();
    let k = cache.k;
    let dim = cache.tail(l).cols();
    let mut out = Matrix::zeros(dim, dim);
    let w = 1.0 / kn as f64;
    let mut delta = vec![0.0; dim];
    for ic in 0..kn {
        let tail = cache.sample_tail(ic, l);
        let z = cache.outputs().col(ic);
        for cp in 0..k {
            // u_icc' = z_ic - e_c'.
            for (a, d) in delta.iter_mut().enumerate() {
                let mut t = 0.0;
                for r in 0..k {
                    let u = z[r] - if r == cp { 1.0 } else { 0.0 };
                    t += tail.get(r, a) * u;
                }
                *d = t;
            }
            out.add_outer(w, &delta);
        }
    }
    Ok(out)
}

/// Gram matrix of the layer-l features (post-activation in relu mode).
pub fn feature_gram(cache: &LayerCache, l: usize) -> Result<Matrix, AnalysisError> {
    check_layer(cache, l)?;
    let x = cache.input(l);
    Ok(x.matmul_transa(x))
}

/// `W_lᵀ W_l`.
pub fn weight_gram(state: &ModelState, l: usize) -> Matrix {
    let w = state.weight(l);
    w.matmul_transa(w)
}

/// Spectrum of the layer-l weight Gram under the given outlier rule.
pub fn weight_gram_spectrum(
    state: &ModelState,
    l: usize,
    rule: super::OutlierRule,
) -> Result<super::SpectralSummary, AnalysisError> {
    super::dense_spectral_summary(&weight_gram(state, l), rule)
}
