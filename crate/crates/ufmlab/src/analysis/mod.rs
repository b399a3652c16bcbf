//! Layer-wise matrices and their spectra: the Hessian with respect to one
//! layer's flattened weights, its class/cross/within decomposition and
//! knockouts, gradient covariance, backpropagation-error second moments,
//! weight and feature Grams, alignment grids, and frame diagnostics.
//!
//! Each matrix is available in two equivalent forms: the assembled dense
//! [`Matrix`] and a [`SymFactors`] sum of weighted outer products. The
//! factored form carries the exact same operator (the dense assembly is the
//! literal expansion of the factors), so spectra computed from either route
//! agree to rounding; the tests in this module pin that down. At the d² x d²
//! sizes of the paper-scale runs the factored route is the one that keeps
//! eigendecompositions affordable.

mod alignment;
mod matrices;
mod spectra;

pub use alignment::{
    frame_diagnostics, gradient_alignment_empirical, gradient_alignment_natural,
    hessian_alignment, AlignmentGrid, EmpiricalGradientAlignment, FrameGrids,
    NaturalGradientAlignment,
};
pub use matrices::{
    backprop_error_moment, feature_gram, gradient_covariance, gradient_covariance_factors,
    hessian_factors, hessian_layer, papyan_components, papyan_factors, weight_gram,
    weight_gram_spectrum, PapyanFactors,
};
pub use spectra::{
    dense_spectral_summary, factored_spectral_summary, hessian_spectrum, knockout_spectra,
    outlier_partition, spectral_summary_from_values, DecompositionReport, OutlierPartition,
    SpectralSummary,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("layer {l} out of range 1..={layers}")]
    LayerOutOfRange { l: usize, layers: usize },
    #[error("empty spectrum")]
    EmptySpectrum,
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
}

/// Bulk/outlier separation rule: a leading eigenvalue is an outlier when it
/// exceeds `tau_rel * max(top_value, abs_floor)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutlierRule {
    pub tau_rel: f64,
    pub abs_floor: f64,
}

impl Default for OutlierRule {
    fn default() -> Self {
        Self {
            tau_rel: 1e-3,
            abs_floor: 1e-12,
        }
    }
}
