//! Symmetric eigendecomposition by the cyclic Jacobi rotation method, plus
//! the Moore-Penrose pseudoinverse built on top of it.
//!
//! Rotations are scheduled in round-robin rounds: each round annihilates
//! n/2 disjoint pivots whose angles are all computed from the pre-round
//! matrix. Disjoint pairs leave each other's 2x2 pivot blocks untouched, so
//! every pivot of a round is zeroed exactly, and the round can be applied as
//! one row pass followed by one column pass over the matrix. That keeps the
//! inner loops contiguous, which matters at the d² x d² sizes this crate
//! feeds in.

use super::matrix::Matrix;
use super::NumericsError;

/// Relative off-diagonal reduction demanded before the iteration stops.
const OFF_REDUCTION: f64 = 1e-12;
const MAX_SWEEPS: usize = 60;

/// Eigenvalues (descending) paired with orthonormal eigenvector columns.
#[derive(Debug, Clone)]
pub struct EigenSystem {
    pub values: Vec<f64>,
    /// Column j is the eigenvector for `values[j]`.
    pub vectors: Matrix,
}

/// Full eigendecomposition of a symmetric matrix.
///
/// `tol` bounds the accepted asymmetry `max |S - Sᵀ|`; the input is
/// symmetrized before iterating.
pub fn sym_eig(s: &Matrix, tol: f64) -> Result<EigenSystem, NumericsError> {
    let (values, vectors) = jacobi(s, tol, true)?;
    Ok(EigenSystem {
        values,
        vectors: vectors.expect("vectors requested"),
    })
}

/// Eigenvalues only (descending); skips eigenvector accumulation.
pub fn sym_eigvals(s: &Matrix, tol: f64) -> Result<Vec<f64>, NumericsError> {
    let (values, _) = jacobi(s, tol, false)?;
    Ok(values)
}

fn jacobi(
    s: &Matrix,
    tol: f64,
    want_vectors: bool,
) -> Result<(Vec<f64>, Option<Matrix>), NumericsError> {
    if !s.is_square() {
        return Err(NumericsError::NotSquare {
            rows: s.rows(),
            cols: s.cols(),
        });
    }
    let asym = s.max_asymmetry();
    if asym > tol {
        return Err(NumericsError::Asymmetric { max_asym: asym, tol });
    }
    let n = s.rows();

    // Work on the symmetrized copy.
    let mut a = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (s.get(i, j) + s.get(j, i));
        }
    }
    let mut v = if want_vectors {
        Some(Matrix::identity(n))
    } else {
        None
    };

    if n == 1 {
        let values = vec![a[0]];
        return Ok((values, v));
    }

    let off0 = off_fro(&a, n);
    let fro = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    // Floor at the attainable rounding noise for this matrix scale.
    let floor = f64::EPSILON * fro * (n as f64).sqrt();
    let threshold = (OFF_REDUCTION * off0).max(floor);
    if off0 <= threshold {
        return Ok(finish(a, n, v));
    }
    let skip = threshold / (2.0 * n as f64);

    // Round-robin schedule: index 0 fixed, the rest rotate. A dummy slot
    // pads odd n.
    let m = n + (n % 2);
    let mut seat: Vec<usize> = (0..m).collect();
    let mut rotations: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(m / 2);

    for _ in 0..MAX_SWEEPS {
        for _round in 0..(m - 1) {
            rotations.clear();
            for i in 0..m / 2 {
                let (mut p, mut q) = (seat[i], seat[m - 1 - i]);
                if p >= n || q >= n {
                    continue; // dummy seat
                }
                if p > q {
                    std::mem::swap(&mut p, &mut q);
                }
                let apq = a[p * n + q];
                if apq.abs() <= skip {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = if theta >= 0.0 {
                    1.0 / (theta + (1.0 + theta * theta).sqrt())
                } else {
                    -1.0 / (-theta + (1.0 + theta * theta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                rotations.push((p, q, c, t * c));
            }
            if rotations.is_empty() {
                seat[1..].rotate_right(1);
                continue;
            }
            // Row pass: B = JᵀA, each rotation owns its two rows.
            for &(p, q, c, s_) in &rotations {
                let (head, tail) = a.split_at_mut(q * n);
                let rp = &mut head[p * n..p * n + n];
                let rq = &mut tail[..n];
                for (x, y) in rp.iter_mut().zip(rq.iter_mut()) {
                    let (xv, yv) = (*x, *y);
                    *x = c * xv - s_ * yv;
                    *y = s_ * xv + c * yv;
                }
            }
            // Column pass: A = BJ, processed row by row so each row stays in
            // cache while all of the round's rotations hit it.
            for i in 0..n {
                let row = &mut a[i * n..(i + 1) * n];
                for &(p, q, c, s_) in &rotations {
                    let (x, y) = (row[p], row[q]);
                    row[p] = c * x - s_ * y;
                    row[q] = s_ * x + c * y;
                }
            }
            if let Some(v) = v.as_mut() {
                let vd = v.data_mut();
                for i in 0..n {
                    let row = &mut vd[i * n..(i + 1) * n];
                    for &(p, q, c, s_) in &rotations {
                        let (x, y) = (row[p], row[q]);
                        row[p] = c * x - s_ * y;
                        row[q] = s_ * x + c * y;
                    }
                }
            }
            seat[1..].rotate_right(1);
        }
        if off_fro(&a, n) <= threshold {
            return Ok(finish(a, n, v));
        }
    }
    Err(NumericsError::EigenNotConverged {
        achieved: off_fro(&a, n),
        target: threshold,
    })
}

fn off_fro(a: &[f64], n: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let x = a[i * n + j];
            sum += 2.0 * x * x;
        }
    }
    sum.sqrt()
}

fn finish(a: Vec<f64>, n: usize, v: Option<Matrix>) -> (Vec<f64>, Option<Matrix>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .expect("finite eigenvalues")
    });
    let values: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = v.map(|v| {
        Matrix::from_fn(n, n, |i, j| v.get(i, order[j]))
    });
    (values, vectors)
}

/// Moore-Penrose pseudoinverse of a symmetric PSD matrix: eigenvalues with
/// magnitude below `rel_cutoff * |lambda|_max` are treated as zero.
pub fn pinv(s: &Matrix, rel_cutoff: f64) -> Result<Matrix, NumericsError> {
    let tol = 1e-8 * s.max_abs().max(1.0);
    let eig = sym_eig(s, tol)?;
    let n = s.rows();
    let lmax = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = rel_cutoff * lmax;
    let inv: Vec<f64> = eig
        .values
        .iter()
        .map(|&l| if l.abs() > cutoff && l != 0.0 { 1.0 / l } else { 0.0 })
        .collect();
    let mut out = Matrix::zeros(n, n);
    for (k, &w) in inv.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let vk = eig.vectors.col(k);
        out.add_outer(w, &vk);
    }
    Ok(out)
}

/// Default relative cutoff used by [`pinv`] callers across the crate:
/// separates numerically-zero eigenvalues of collapsed covariances from
/// genuine ones at the problem scales studied here.
pub const PINV_DEFAULT_CUTOFF: f64 = 1e-8;
