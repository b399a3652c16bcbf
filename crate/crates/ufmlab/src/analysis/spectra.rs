//! Spectral summaries, the bulk/outlier partition, and knockout reports.

use super::matrices::{hessian_factors, papyan_factors};
use super::{AnalysisError, OutlierRule};
use crate::model::LayerCache;
use crate::numerics::{sym_eigvals, Matrix, SymFactors};

/// Sorted eigenvalues with an outlier partition and, optionally, the top
/// eigenvectors.
#[derive(Debug, Clone)]
pub struct SpectralSummary {
    /// Full spectrum, descending.
    pub values: Vec<f64>,
    pub outlier_count: usize,
    /// The leading `outlier_count` values.
    pub outlier_values: Vec<f64>,
    /// Largest value outside the outlier set (0 for an all-outlier spectrum).
    pub bulk_edge: f64,
    /// Position of the largest relative gap between consecutive positive
    /// values, as a secondary diagnostic.
    pub gap_index: Option<usize>,
    /// Eigenvectors for the leading values, when requested.
    pub top_vectors: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierPartition {
    pub count: usize,
    pub gap_index: Option<usize>,
}

/// Counts the leading values above `tau_rel * max(values[0], abs_floor)`.
pub fn outlier_partition(
    values: &[f64],
    rule: OutlierRule,
) -> Result<OutlierPartition, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::EmptySpectrum);
    }
    let threshold = rule.tau_rel * values[0].max(rule.abs_floor);
    let count = values.iter().take_while(|v| **v > threshold).count();
    let mut gap_index = None;
    let mut best = 1.0;
    for (i, w) in values.windows(2).enumerate() {
        if w[0] > 0.0 && w[1] > 0.0 {
            let ratio = w[0] / w[1];
            if ratio > best {
                best = ratio;
                gap_index = Some(i);
            }
        }
    }
    Ok(OutlierPartition { count, gap_index })
}

pub fn spectral_summary_from_values(
    values: Vec<f64>,
    rule: OutlierRule,
    top_vectors: Option<Vec<Vec<f64>>>,
) -> Result<SpectralSummary, AnalysisError> {
    let part = outlier_partition(&values, rule)?;
    let outlier_values = values[..part.count].to_vec();
    let bulk_edge = values.get(part.count).copied().unwrap_or(0.0);
    Ok(SpectralSummary {
        values,
        outlier_count: part.count,
        outlier_values,
        bulk_edge,
        gap_index: part.gap_index,
        top_vectors,
    })
}

/// Summary from a dense symmetric matrix via the Jacobi solver.
pub fn dense_spectral_summary(
    s: &Matrix,
    rule: OutlierRule,
) -> Result<SpectralSummary, AnalysisError> {
    let tol = 1e-8 * s.max_abs().max(1.0);
    let values = sym_eigvals(s, tol)?;
    spectral_summary_from_values(values, rule, None)
}

/// Summary from a factored matrix; `want_vectors` lifts that many leading
/// eigenvectors.
pub fn factored_spectral_summary(
    f: &SymFactors,
    rule: OutlierRule,
    want_vectors: usize,
) -> Result<SpectralSummary, AnalysisError> {
    if want_vectors == 0 {
        return spectral_summary_from_values(f.spectrum()?, rule, None);
    }
    let re = f.range_eig()?;
    let mut values = re.values.clone();
    values.resize(f.dim(), 0.0);
    values.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
    let take = want_vectors.min(re.vectors.len());
    let vectors = re.vectors[..take].to_vec();
    spectral_summary_from_values(values, rule, Some(vectors))
}

/// Layer-l Hessian spectrum through the factored route.
pub fn hessian_spectrum(
    cache: &LayerCache,
    l: usize,
    rule: OutlierRule,
    want_vectors: usize,
) -> Result<SpectralSummary, AnalysisError> {
    let f = hessian_factors(cache, l)?;
    factored_spectral_summary(&f, rule, want_vectors)
}

/// Spectra of the Hessian and of each single-component knockout, plus the
/// decomposition residual `‖Hess - (class + cross + within)‖_F`.
#[derive(Debug, Clone)]
pub struct DecompositionReport {
    pub full: SpectralSummary,
    pub minus_class: SpectralSummary,
    pub minus_cross: SpectralSummary,
    pub minus_within: SpectralSummary,
    pub residual: f64,
    pub hessian_norm: f64,
}

pub fn knockout_spectra(
    cache: &LayerCache,
    l: usize,
    rule: OutlierRule,
) -> Result<DecompositionReport, AnalysisError> {
    let hess = hessian_factors(cache, l)?;
    let parts = papyan_factors(cache, l)?;
    let full = factored_spectral_summary(&hess, rule, 0)?;
    let minus_class = factored_spectral_summary(&hess.minus(&parts.class), rule, 0)?;
    let minus_cross = factored_spectral_summary(&hess.minus(&parts.cross), rule, 0)?;
    let minus_within = factored_spectral_summary(&hess.minus(&parts.within), rule, 0)?;
    let residual = hess
        .minus(&parts.class)
        .minus(&parts.cross)
        .minus(&parts.within)
        .frobenius_norm();
    let hessian_norm = hess.frobenius_norm();
    Ok(DecompositionReport {
        full,
        minus_class,
        minus_cross,
        minus_within,
        residual,
        hessian_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::matrices::hessian_layer;
    use crate::model::{forward, init_state, Activation, HyperConfig};

    #[test]
    fn partition_examples() {
        let rule = OutlierRule::default();
        let p = outlier_partition(&[1.0, 1.0, 1e-9, 1e-10], rule).unwrap();
        assert_eq!(p.count, 2);
        assert_eq!(p.gap_index, Some(1));
        let p = outlier_partition(&[0.5, 0.5, 0.5], rule).unwrap();
        assert_eq!(p.count, 3);
        assert!(outlier_partition(&[], rule).is_err());
        // All-tiny spectrum: the absolute floor keeps noise out.
        let p = outlier_partition(&[1e-16, 1e-17], rule).unwrap();
        assert_eq!(p.count, 0);
    }

    #[test]
    fn factored_spectrum_matches_dense_route() {
        for activation in [Activation::Linear, Activation::Relu] {
            let mut cfg = HyperConfig::new(2, 3, 5, 3, activation);
            cfg.seed = 61;
            let state = init_state(&cfg);
            let cache = forward(&state, &cfg);
            for l in [1usize, 3] {
                let rule = OutlierRule::default();
                let fac = hessian_spectrum(&cache, l, rule, 0).unwrap();
                let dense = hessian_layer(&cache, l).unwrap();
                let dj = dense_spectral_summary(&dense, rule).unwrap();
                assert_eq!(fac.values.len(), dj.values.len());
                let scale = dense.frobenius_norm().max(1.0);
                for (a, b) in fac.values.iter().zip(&dj.values) {
                    assert!((a - b).abs() <= 1e-10 * scale, "{activation:?} l{l}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn knockout_residual_is_tiny_everywhere() {
        for activation in [Activation::Linear, Activation::Relu] {
            let mut cfg = HyperConfig::new(2, 2, 4, 2, activation);
            cfg.seed = 67;
            let state = init_state(&cfg);
            let cache = forward(&state, &cfg);
            let report = knockout_spectra(&cache, 1, OutlierRule::default()).unwrap();
            assert!(
                report.residual <= 1e-10 * report.hessian_norm,
                "{activation:?}: {} vs {}",
                report.residual,
                report.hessian_norm
            );
        }
    }

    #[test]
    fn linear_hessian_spectrum_is_kronecker_product_of_factor_spectra() {
        // Hess_l = A^(l+1)T A^(l+1) kron Av{x x^T}: its spectrum must be the
        // pairwise products of the factor spectra.
        let mut cfg = HyperConfig::new(2, 4, 5, 3, Activation::Linear);
        cfg.seed = 71;
        let state = init_state(&cfg);
        let cache = forward(&state, &cfg);
        let l = 2;
        let tail = cache.tail(l + 1);
        let gram = tail.matmul_transa(tail);
        let x = cache.input(l);
        let second = x.matmul_transb(x).scale(1.0 / cfg.kn() as f64);
        let mut products = Vec::new();
        for a in crate::numerics::sym_eigvals(&gram, 1e-12).unwrap() {
            for b in crate::numerics::sym_eigvals(&second, 1e-12).unwrap() {
                products.push(a * b);
            }
        }
        products.sort_by(|p, q| q.partial_cmp(p).unwrap());
        let spec = hessian_spectrum(&cache, l, OutlierRule::default(), 0).unwrap();
        let scale = products[0].max(1.0);
        for (got, want) in spec.values.iter().zip(&products) {
            assert!((got - want).abs() <= 1e-10 * scale, "{got} vs {want}");
        }
    }

    #[test]
    fn summary_fields_consistent() {
        let rule = OutlierRule::default();
        let s = spectral_summary_from_values(vec![2.0, 1.0, 1e-8, 0.0], rule, None).unwrap();
        assert_eq!(s.outlier_count, 2);
        assert_eq!(s.outlier_values, vec![2.0, 1.0]);
        assert_eq!(s.bulk_edge, 1e-8);
    }
}
