//! Dense row-major matrices and the handful of operations the lab needs.

use super::NumericsError;

/// Dense real matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting shape mismatches and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if rows == 0 || cols == 0 {
            return Err(NumericsError::EmptyShape { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(NumericsError::ShapeMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(bad) = data.iter().position(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite {
                row: bad / cols,
                col: bad % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Column vector from a slice.
    pub fn column_vector(v: &[f64]) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn col(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[f64]) {
        assert_eq!(v.len(), self.rows);
        for (i, x) in v.iter().enumerate() {
            self.set(i, j, *x);
        }
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    /// `A * B`. Panics on inner-dimension mismatch; shape bugs are programmer
    /// errors here, not runtime conditions.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} * {}x{}",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &aik) in a_row.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += aik * b;
                }
            }
        }
        out
    }

    /// `Aᵀ * B` without materializing the transpose.
    pub fn matmul_transa(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_transa shape");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &aki) in a_row.iter().enumerate() {
                if aki == 0.0 {
                    continue;
                }
                for (o, &b) in out.row_mut(i).iter_mut().zip(b_row) {
                    *o += aki * b;
                }
            }
        }
        out
    }

    /// `A * Bᵀ` without materializing the transpose.
    pub fn matmul_transb(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_transb shape");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for j in 0..other.rows {
                out_row[j] = dot(a_row, other.row(j));
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    /// `self += alpha * other`, elementwise.
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    /// Rank-one update `self += w * v vᵀ` for square `self`.
    pub fn add_outer(&mut self, w: f64, v: &[f64]) {
        assert_eq!(self.rows, v.len());
        assert_eq!(self.cols, v.len());
        let n = v.len();
        for i in 0..n {
            let wi = w * v[i];
            if wi == 0.0 {
                continue;
            }
            let row = &mut self.data[i * n..(i + 1) * n];
            for j in 0..n {
                row[j] += wi * v[j];
            }
        }
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len());
        (0..self.rows).map(|i| dot(self.row(i), v)).collect()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Frobenius inner product `⟨self, other⟩`.
    pub fn frobenius_dot(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        dot(&self.data, &other.data)
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }
}

// Four-lane accumulation: a plain sequential sum chains the FP adds and
// serializes the loop.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let chunks = n / 4;
    let mut acc = [0.0f64; 4];
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Kronecker product with the index law
/// `(A ⊗ B)[rb*i + k, cb*j + m] = A[i,j] * B[k,m]` (zero-based).
pub fn kron(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    let rows = a
        .rows()
        .checked_mul(b.rows())
        .ok_or(NumericsError::SizeOverflow)?;
    let cols = a
        .cols()
        .checked_mul(b.cols())
        .ok_or(NumericsError::SizeOverflow)?;
    rows.checked_mul(cols).ok_or(NumericsError::SizeOverflow)?;
    let mut out = Matrix::zeros(rows, cols);
    let (rb, cb) = (b.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            let aij = a.get(i, j);
            if aij == 0.0 {
                continue;
            }
            for k in 0..rb {
                let out_row = out.row_mut(i * rb + k);
                let b_row = b.row(k);
                for m in 0..cb {
                    out_row[j * cb + m] = aij * b_row[m];
                }
            }
        }
    }
    Ok(out)
}

/// Accumulates `out += w * (A ⊗ B)` for square `A`, `B` without allocating
/// the product. `out` must be `(ra*rb) x (ra*rb)`.
pub fn kron_axpy(out: &mut Matrix, w: f64, a: &Matrix, b: &Matrix) {
    let (ra, rb) = (a.rows(), b.rows());
    assert!(a.is_square() && b.is_square());
    assert_eq!(out.rows(), ra * rb);
    assert_eq!(out.cols(), ra * rb);
    for i in 0..ra {
        for j in 0..ra {
            let waij = w * a.get(i, j);
            if waij == 0.0 {
                continue;
            }
            for k in 0..rb {
                let out_row = out.row_mut(i * rb + k);
                let b_row = b.row(k);
                let base = j * rb;
                for m in 0..rb {
                    out_row[base + m] += waij * b_row[m];
                }
            }
        }
    }
}

/// Row-major flattening of a matrix into a column vector:
/// entry `(x, y)` lands at index `cols*x + y`. With this stride rule
/// `flatten(u vᵀ) = u ⊗ v` holds exactly.
pub fn flatten(w: &Matrix) -> Matrix {
    Matrix {
        rows: w.rows() * w.cols(),
        cols: 1,
        data: w.data().to_vec(),
    }
}

/// Inverse of [`flatten`].
pub fn unflatten(v: &Matrix, rows: usize, cols: usize) -> Result<Matrix, NumericsError> {
    if v.cols() != 1 || v.rows() != rows * cols {
        return Err(NumericsError::ShapeMismatch {
            expected: rows * cols,
            got: v.rows() * v.cols(),
        });
    }
    Ok(Matrix {
        rows,
        cols,
        data: v.data().to_vec(),
    })
}

/// Least-squares scale `alpha` minimizing `‖A - alpha·B‖_F`, together with
/// the relative residual `‖A - alpha·B‖_F / ‖A‖_F` (zero for `A = 0`).
pub fn fit_scale(a: &Matrix, b: &Matrix) -> Result<ScaleFit, NumericsError> {
    if (a.rows(), a.cols()) != (b.rows(), b.cols()) {
        return Err(NumericsError::ShapeMismatch {
            expected: a.rows() * a.cols(),
            got: b.rows() * b.cols(),
        });
    }
    let bb = b.frobenius_dot(b);
    if bb == 0.0 {
        return Err(NumericsError::ZeroReference);
    }
    let alpha = a.frobenius_dot(b) / bb;
    let norm_a = a.frobenius_norm();
    let residual = if norm_a == 0.0 {
        0.0
    } else {
        let mut r = a.clone();
        r.axpy(-alpha, b);
        r.frobenius_norm() / norm_a
    };
    Ok(ScaleFit { alpha, residual })
}

/// Result of [`fit_scale`].
#[derive(Debug, Clone, Copy)]
pub struct ScaleFit {
    pub alpha: f64,
    pub residual: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.normal())
    }

    #[test]
    fn new_rejects_bad_input() {
        assert!(Matrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(Matrix::new(0, 2, vec![]).is_err());
        assert!(Matrix::new(2, 2, vec![1.0; 4]).is_ok());
    }

    #[test]
    fn kron_identities() {
        let i2 = Matrix::identity(2);
        let i3 = Matrix::identity(3);
        let k = kron(&i2, &i3).unwrap();
        assert_eq!(k, Matrix::identity(6));
    }

    #[test]
    fn kron_basis_vectors() {
        // e_c ⊗ e_c' has its single 1 at q*(c-1)+c' in one-based indexing.
        let p = 4;
        let q = 3;
        for c in 0..p {
            for cp in 0..q {
                let ec = Matrix::from_fn(p, 1, |i, _| if i == c { 1.0 } else { 0.0 });
                let ecp = Matrix::from_fn(q, 1, |i, _| if i == cp { 1.0 } else { 0.0 });
                let k = kron(&ec, &ecp).unwrap();
                for idx in 0..p * q {
                    let expect = if idx == q * c + cp { 1.0 } else { 0.0 };
                    assert_eq!(k.get(idx, 0), expect);
                }
            }
        }
    }

    #[test]
    fn kron_matches_index_law() {
        // Quadruple-loop evaluation of the index law as an independent oracle.
        let mut rng = Rng::new(7);
        let a = random_matrix(&mut rng, 2, 3);
        let b = random_matrix(&mut rng, 3, 2);
        let k = kron(&a, &b).unwrap();
        assert_eq!(k.rows(), 6);
        assert_eq!(k.cols(), 6);
        for x in 0..a.rows() {
            for y in 0..b.rows() {
                for u in 0..a.cols() {
                    for v in 0..b.cols() {
                        let got = k.get(b.rows() * x + y, b.cols() * u + v);
                        let want = a.get(x, u) * b.get(y, v);
                        assert_eq!(got, want);
                    }
                }
            }
        }
    }

    #[test]
    fn kron_axpy_matches_kron() {
        let mut rng = Rng::new(11);
        let a = random_matrix(&mut rng, 3, 3);
        let b = random_matrix(&mut rng, 4, 4);
        let direct = kron(&a, &b).unwrap().scale(0.7);
        let mut acc = Matrix::zeros(12, 12);
        kron_axpy(&mut acc, 0.7, &a, &b);
        assert!(acc.sub(&direct).max_abs() < 1e-15);
    }

    #[test]
    fn flatten_definition_and_roundtrip() {
        let w = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let f = flatten(&w);
        assert_eq!(f.data(), &[1.0, 2.0, 3.0, 4.0]);

        let mut rng = Rng::new(3);
        let w = random_matrix(&mut rng, 5, 5);
        let back = unflatten(&flatten(&w), 5, 5).unwrap();
        assert_eq!(w, back);
        // Non-square shapes round-trip with the stride equal to the column count.
        let w = random_matrix(&mut rng, 3, 7);
        assert_eq!(w, unflatten(&flatten(&w), 3, 7).unwrap());
    }

    #[test]
    fn flatten_outer_product_is_kron() {
        let mut rng = Rng::new(5);
        let u = random_matrix(&mut rng, 4, 1);
        let v = random_matrix(&mut rng, 6, 1);
        let outer = u.matmul_transb(&v);
        let lhs = flatten(&outer);
        let rhs = kron(&u, &v).unwrap();
        assert!(lhs.sub(&rhs).max_abs() < 1e-15);
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = Rng::new(13);
        let a = random_matrix(&mut rng, 4, 6);
        let b = random_matrix(&mut rng, 4, 5);
        let c = random_matrix(&mut rng, 7, 6);
        let at_b = a.matmul_transa(&b);
        assert!(at_b.sub(&a.transpose().matmul(&b)).max_abs() < 1e-13);
        let a_ct = a.matmul_transb(&c);
        assert!(a_ct.sub(&a.matmul(&c.transpose())).max_abs() < 1e-13);
    }

    #[test]
    fn fit_scale_exact_and_orthogonal() {
        let mut rng = Rng::new(17);
        let b = random_matrix(&mut rng, 3, 4);
        let a = b.scale(3.0);
        let fit = fit_scale(&a, &b).unwrap();
        assert!((fit.alpha - 3.0).abs() < 1e-14);
        assert!(fit.residual < 1e-14);

        // Frobenius-orthogonal pair: alpha must be zero.
        let a = Matrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        let b = Matrix::new(1, 2, vec![0.0, 1.0]).unwrap();
        let fit = fit_scale(&a, &b).unwrap();
        assert_eq!(fit.alpha, 0.0);

        let zero = Matrix::zeros(3, 4);
        assert!(fit_scale(&a, &zero).is_err());
    }

    #[test]
    fn fit_scale_matches_grid_refinement() {
        // Independent oracle: shrink a dense scan around the best scalar.
        let mut rng = Rng::new(19);
        let a = random_matrix(&mut rng, 4, 4);
        let b = random_matrix(&mut rng, 4, 4);
        let objective = |s: f64| {
            let mut r = a.clone();
            r.axpy(-s, &b);
            r.frobenius_norm()
        };
        let mut lo = -10.0;
        let mut hi = 10.0;
        let mut best = 0.0;
        for _ in 0..40 {
            let step = (hi - lo) / 400.0;
            let mut best_val = f64::INFINITY;
            for i in 0..=400 {
                let s = lo + step * i as f64;
                let val = objective(s);
                if val < best_val {
                    best_val = val;
                    best = s;
                }
            }
            lo = best - step;
            hi = best + step;
        }
        let fit = fit_scale(&a, &b).unwrap();
        assert!(
            (fit.alpha - best).abs() <= 1e-6,
            "alpha {} vs scan {}",
            fit.alpha,
            best
        );
    }

    #[test]
    fn fit_scale_residual_zero_iff_proportional() {
        let mut rng = Rng::new(23);
        let b = random_matrix(&mut rng, 3, 3);
        let fit = fit_scale(&b.scale(-0.37), &b).unwrap();
        assert!(fit.residual <= 1e-12);
        let mut a = b.scale(2.0);
        a.set(0, 0, a.get(0, 0) + 1.0);
        let fit = fit_scale(&a, &b).unwrap();
        assert!(fit.residual > 1e-12);
    }
}
