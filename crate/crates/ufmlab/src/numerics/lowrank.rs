//! Exact spectra of symmetric matrices given in factored form
//! `S = Σ_t w_t v_t v_tᵀ`.
//!
//! Every large matrix assembled by the analysis layer (layer-wise Hessians,
//! their decomposition components and knockouts, gradient covariances) is a
//! short weighted sum of outer products, so its rank is bounded by the term
//! count. Orthonormalizing the factor vectors reduces the N x N eigenproblem
//! to an r x r symmetric core that the Jacobi solver handles directly:
//! with V = Q R (Q orthonormal), S = Q (R W Rᵀ) Qᵀ, and the nonzero spectrum
//! of S is the spectrum of R W Rᵀ. The remaining N - r eigenvalues are
//! exactly zero. Results agree with running [`sym_eig`] on the dense matrix
//! to rounding; the small-instance tests pin that equivalence down.

use super::eigen::{sym_eig, EigenSystem};
use super::matrix::{dot, norm2, Matrix};
use super::NumericsError;

/// Columns dropped during orthonormalization when their residual falls below
/// this fraction of the original vector norm.
const RANK_DROP: f64 = 1e-13;

/// Symmetric matrix in factored form: `dim x dim`, `Σ w_t v_t v_tᵀ`.
#[derive(Debug, Clone)]
pub struct SymFactors {
    dim: usize,
    weights: Vec<f64>,
    vectors: Vec<Vec<f64>>,
}

impl SymFactors {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            weights: Vec::new(),
            vectors: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> usize {
        self.weights.len()
    }

    pub fn push(&mut self, weight: f64, vector: Vec<f64>) {
        assert_eq!(vector.len(), self.dim);
        self.weights.push(weight);
        self.vectors.push(vector);
    }

    /// Concatenation of `self` and `-1 * other`, i.e. the factored form of
    /// the difference matrix.
    pub fn minus(&self, other: &SymFactors) -> SymFactors {
        assert_eq!(self.dim, other.dim);
        let mut out = self.clone();
        for (w, v) in other.weights.iter().zip(&other.vectors) {
            out.weights.push(-w);
            out.vectors.push(v.clone());
        }
        out
    }

    /// Assembles the dense matrix (used by the Matrix-returning analysis ops
    /// and by the small-instance route-equivalence tests).
    pub fn to_dense(&self) -> Matrix {
        let mut out = Matrix::zeros(self.dim, self.dim);
        for (w, v) in self.weights.iter().zip(&self.vectors) {
            out.add_outer(*w, v);
        }
        out
    }

    /// `S * x` straight from the factors.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim);
        let mut out = vec![0.0; self.dim];
        for (w, v) in self.weights.iter().zip(&self.vectors) {
            let c = w * dot(v, x);
            if c == 0.0 {
                continue;
            }
            for (o, vi) in out.iter_mut().zip(v) {
                *o += c * vi;
            }
        }
        out
    }

    /// Frobenius norm via the orthonormalized core: with `V = Q R`,
    /// `‖S‖_F = ‖R W Rᵀ‖_F` by orthogonal invariance. Going through the core
    /// keeps the cancellation in near-zero differences linear instead of
    /// squared, so residuals of exact identities come out at rounding level.
    pub fn frobenius_norm(&self) -> f64 {
        match self.basis_and_core() {
            Some((_, core)) => core.frobenius_norm(),
            None => 0.0,
        }
    }

    /// `‖A·B‖_F` for two factored matrices without assembling either:
    /// `A B = Q_a C_a (Q_aᵀ Q_b) C_b Q_bᵀ` and the outer factors are
    /// norm-preserving.
    pub fn product_frobenius_norm(a: &SymFactors, b: &SymFactors) -> f64 {
        assert_eq!(a.dim, b.dim);
        let (Some((qa, ca)), Some((qb, cb))) = (a.basis_and_core(), b.basis_and_core()) else {
            return 0.0;
        };
        let cross = Matrix::from_fn(qa.len(), qb.len(), |s, u| dot(&qa[s], &qb[u]));
        ca.matmul(&cross).matmul(&cb).frobenius_norm()
    }

    /// Orthonormal basis of the factor span plus the small symmetric core
    /// `R W Rᵀ` expressed in it; `None` when the span is trivial.
    fn basis_and_core(&self) -> Option<(Vec<Vec<f64>>, Matrix)> {
        if self.terms() == 0 {
            return None;
        }
        let (q, coeffs) = self.orthonormalize();
        let r = q.len();
        if r == 0 {
            return None;
        }
        let mut core = Matrix::zeros(r, r);
        for (w, c) in self.weights.iter().zip(&coeffs) {
            core.add_outer(*w, c);
        }
        Some((q, core))
    }

    /// Full spectrum, descending, padded with the exact zeros of the
    /// null space.
    pub fn spectrum(&self) -> Result<Vec<f64>, NumericsError> {
        let (mut vals, _) = self.core_eig(false)?;
        vals.resize(self.dim, 0.0);
        vals.sort_by(|a, b| b.partial_cmp(a).expect("finite eigenvalues"));
        Ok(vals)
    }

    /// Nonzero-part eigendecomposition: descending eigenvalues of the core
    /// with their eigenvectors lifted back to dimension `dim`. Null-space
    /// directions are omitted.
    pub fn range_eig(&self) -> Result<RangeEig, NumericsError> {
        let (vals, vecs) = self.core_eig(true)?;
        Ok(RangeEig {
            values: vals,
            vectors: vecs.expect("vectors requested"),
        })
    }

    fn core_eig(
        &self,
        want_vectors: bool,
    ) -> Result<(Vec<f64>, Option<Vec<Vec<f64>>>), NumericsError> {
        let Some((q, core)) = self.basis_and_core() else {
            return Ok((Vec::new(), Some(Vec::new()).filter(|_| want_vectors)));
        };
        let r = q.len();
        let tol = 1e-10 * core.max_abs().max(1.0);
        let eig: EigenSystem = sym_eig(&core, tol)?;
        let vectors = if want_vectors {
            let mut out = Vec::with_capacity(r);
            for k in 0..r {
                let u = eig.vectors.col(k);
                let mut v = vec![0.0; self.dim];
                for (ui, qi) in u.iter().zip(&q) {
                    if *ui == 0.0 {
                        continue;
                    }
                    for (vj, qj) in v.iter_mut().zip(qi) {
                        *vj += ui * qj;
                    }
                }
                out.push(v);
            }
            Some(out)
        } else {
            None
        };
        Ok((eig.values, vectors))
    }

    /// Modified Gram-Schmidt with a second pass; returns the orthonormal
    /// basis of the factor span and, per term, its coefficient vector in
    /// that basis.
    fn orthonormalize(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut q: Vec<Vec<f64>> = Vec::new();
        let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(self.terms());
        for v in &self.vectors {
            let original = norm2(v);
            let mut work = v.clone();
            let mut c = vec![0.0; q.len()];
            for _pass in 0..2 {
                for (k, qk) in q.iter().enumerate() {
                    let p = dot(&work, qk);
                    c[k] += p;
                    for (w, qki) in work.iter_mut().zip(qk) {
                        *w -= p * qki;
                    }
                }
            }
            let rem = norm2(&work);
            if original > 0.0 && rem > RANK_DROP * original {
                for w in work.iter_mut() {
                    *w /= rem;
                }
                q.push(work);
                c.push(rem);
            }
            coeffs.push(c);
        }
        // Pad coefficient vectors of earlier terms to the final basis size.
        let r = q.len();
        for c in coeffs.iter_mut() {
            c.resize(r, 0.0);
        }
        (q, coeffs)
    }
}

/// Nonzero-part eigendecomposition from [`SymFactors::range_eig`].
#[derive(Debug, Clone)]
pub struct RangeEig {
    /// Descending eigenvalues of the factor span (length = numerical rank).
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors matching `values`, each of length `dim`.
    pub vectors: Vec<Vec<f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::eigen::sym_eigvals;
    use crate::numerics::Rng;

    fn random_factors(rng: &mut Rng, dim: usize, terms: usize, signed: bool) -> SymFactors {
        let mut f = SymFactors::new(dim);
        for t in 0..terms {
            let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let w = if signed && t % 3 == 0 { -0.5 } else { 1.0 + t as f64 * 0.1 };
            f.push(w, v);
        }
        f
    }

    #[test]
    fn spectrum_matches_dense_jacobi() {
        let mut rng = Rng::new(61);
        for &(dim, terms, signed) in &[(12usize, 4usize, false), (20, 7, true), (9, 15, false)] {
            let f = random_factors(&mut rng, dim, terms, signed);
            let dense = f.to_dense();
            let dense_vals = sym_eigvals(&dense, 1e-12 * dense.max_abs().max(1.0)).unwrap();
            let fac_vals = f.spectrum().unwrap();
            assert_eq!(fac_vals.len(), dim);
            let scale = dense.frobenius_norm().max(1.0);
            for (a, b) in fac_vals.iter().zip(&dense_vals) {
                assert!((a - b).abs() < 1e-10 * scale, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn range_eig_reconstructs() {
        let mut rng = Rng::new(67);
        let f = random_factors(&mut rng, 15, 5, true);
        let dense = f.to_dense();
        let re = f.range_eig().unwrap();
        let mut rebuilt = Matrix::zeros(15, 15);
        for (l, v) in re.values.iter().zip(&re.vectors) {
            rebuilt.add_outer(*l, v);
        }
        assert!(rebuilt.sub(&dense).max_abs() < 1e-11 * dense.max_abs().max(1.0));
        // Orthonormality of the lifted eigenvectors.
        for i in 0..re.vectors.len() {
            for j in 0..re.vectors.len() {
                let d = dot(&re.vectors[i], &re.vectors[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((d - expect).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn dependent_factors_collapse_rank() {
        let mut f = SymFactors::new(6);
        let v: Vec<f64> = (0..6).map(|i| i as f64 + 1.0).collect();
        f.push(1.0, v.clone());
        f.push(2.0, v.clone());
        f.push(0.5, v.iter().map(|x| -2.0 * x).collect());
        let re = f.range_eig().unwrap();
        // All three factors share one line: S = (1 + 2 + 0.5*4) v vᵀ.
        assert_eq!(re.values.len(), 1);
        let nv2 = dot(&v, &v);
        assert!((re.values[0] - 5.0 * nv2).abs() < 1e-9 * nv2);
    }

    #[test]
    fn minus_and_matvec_consistent() {
        let mut rng = Rng::new(71);
        let a = random_factors(&mut rng, 10, 4, false);
        let b = random_factors(&mut rng, 10, 3, false);
        let diff = a.minus(&b);
        let dense = a.to_dense().sub(&b.to_dense());
        assert!(diff.to_dense().sub(&dense).max_abs() < 1e-12);
        let x: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
        let got = diff.matvec(&x);
        let want = dense.matvec(&x);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-10);
        }
    }

    #[test]
    fn norms_match_dense() {
        let mut rng = Rng::new(73);
        let a = random_factors(&mut rng, 8, 5, true);
        let b = random_factors(&mut rng, 8, 4, false);
        let fro = a.frobenius_norm();
        let dense_fro = a.to_dense().frobenius_norm();
        assert!((fro - dense_fro).abs() < 1e-9 * dense_fro.max(1.0));
        let prod = SymFactors::product_frobenius_norm(&a, &b);
        let dense_prod = a.to_dense().matmul(&b.to_dense()).frobenius_norm();
        assert!((prod - dense_prod).abs() < 1e-8 * dense_prod.max(1.0));
    }
}
