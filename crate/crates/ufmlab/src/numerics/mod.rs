//! Dense real linear algebra substrate: matrices, Kronecker products,
//! flattening, symmetric eigendecomposition, pseudoinverse, scale fitting,
//! factored-form spectra, and seeded randomness.
//!
//! Everything here is a pure function of its inputs; values are immutable
//! after construction and safe to share across threads.

pub mod eigen;
pub mod lowrank;
pub mod matrix;
pub mod rng;

pub use eigen::{pinv, sym_eig, sym_eigvals, EigenSystem, PINV_DEFAULT_CUTOFF};
pub use lowrank::{RangeEig, SymFactors};
pub use matrix::{dot, fit_scale, flatten, kron, kron_axpy, norm2, unflatten, Matrix, ScaleFit};
pub use rng::Rng;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("matrix shape {rows}x{cols} is empty")]
    EmptyShape { rows: usize, cols: usize },
    #[error("entry count mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("product dimensions overflow usize")]
    SizeOverflow,
    #[error("matrix is {rows}x{cols}, not square")]
    NotSquare { rows: usize, cols: usize },
    #[error("asymmetry {max_asym:e} exceeds tolerance {tol:e}")]
    Asymmetric { max_asym: f64, tol: f64 },
    #[error("Jacobi iteration stalled: off-diagonal norm {achieved:e}, target {target:e}")]
    EigenNotConverged { achieved: f64, target: f64 },
    #[error("reference matrix is identically zero")]
    ZeroReference,
}

/// Gaussian matrix with i.i.d. N(0, std²) entries drawn row-major from the
/// seeded stream.
pub fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    assert!(std > 0.0, "gaussian_matrix requires std > 0");
    Matrix::from_fn(rows, cols, |_, _| std * rng.normal())
}
