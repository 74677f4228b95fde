//! Small dense helpers shared by the kernel, HSIC and eigenvalue code.

use nalgebra::linalg::{SymmetricEigen, QR};
use nalgebra::DVector;

use crate::{Error, Matrix, Result};

/// Rows with norm below this are treated as zero by [`normalize_rows`].
pub const ZERO_ROW_NORM: f64 = 1e-12;

/// `aᵀ·b`, routed through the blocked GEMM kernel.
pub fn at_b(a: &Matrix, b: &Matrix) -> Matrix {
    a.transpose() * b
}

pub fn column_means(m: &Matrix) -> DVector<f64> {
    let n = m.nrows().max(1) as f64;
    DVector::from_iterator(m.ncols(), m.column_iter().map(|c| c.sum() / n))
}

/// Subtracts each column's mean; equal to `H·m` with `H = I − 11ᵀ/n`.
pub fn center_columns(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / col.len().max(1) as f64;
        col.add_scalar_mut(-mean);
    }
    out
}

/// Double-centers a square matrix: `H·k·H`.
pub fn double_center(k: &Matrix) -> Matrix {
    let n = k.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = k.row_iter().map(|r| r.sum() / nf).collect();
    let col_means: Vec<f64> = k.column_iter().map(|c| c.sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    Matrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Scales each row to unit L2 norm. Rows with norm below [`ZERO_ROW_NORM`]
/// become zero. Returns the normalised matrix and the original row norms.
pub fn normalize_rows(m: &Matrix) -> (Matrix, Vec<f64>) {
    let norms: Vec<f64> = m.row_iter().map(|r| r.norm()).collect();
    let mut out = m.clone();
    for (i, &norm) in norms.iter().enumerate() {
        let mut row = out.row_mut(i);
        if norm < ZERO_ROW_NORM {
            row.fill(0.0);
        } else {
            row /= norm;
        }
    }
    (out, norms)
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn max_asymmetry(m: &Matrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub fn sym_eigen_desc(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !all_finite(a) {
        return Err(Error::NonFiniteInput("symmetric eigenproblem"));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), Matrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Matrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// Singular values and right singular vectors (as columns) of `c`.
/// Only the first `min(p, q)` right singular vectors are returned.
pub fn right_singular(c: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    if !all_finite(c) {
        return Err(Error::NonFiniteInput("singular value decomposition"));
    }
    let (p, q) = c.shape();
    if p == 0 || q == 0 {
        return Ok((Vec::new(), Matrix::zeros(q, 0)));
    }
    // Work through the small p×p Gram matrix CCᵀ = UΣ²Uᵀ and map back with
    // v = Cᵀu/σ. nalgebra's SVD of short-wide rank-deficient matrices can
    // return right singular vectors with visible leakage into the range.
    let gram = c * c.transpose();
    let (_, u) = sym_eigen_desc(&symmetrize(&gram))?;
    let k = p.min(q);
    // σᵢ = ‖Cᵀuᵢ‖ rather than √λᵢ, which keeps null directions near 1e-17
    // instead of the ~1e-9 floor that squaring imposes.
    let mut scored: Vec<(f64, DVector<f64>)> = (0..p)
        .map(|i| {
            let v = c.transpose() * u.column(i);
            (v.norm(), v)
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.truncate(k);
    let values: Vec<f64> = scored.iter().map(|(s, _)| *s).collect();
    let mut vectors = Matrix::zeros(q, k);
    for (i, (sigma, v)) in scored.iter().enumerate() {
        if *sigma > 0.0 {
            vectors.set_column(i, &(v / *sigma));
        }
    }
    // Re-orthonormalise columns that carry signal (Gram-Schmidt twice).
    for i in 0..k {
        for _ in 0..2 {
            for j in 0..i {
                let proj = vectors.column(j).dot(&vectors.column(i));
                let vj = vectors.column(j).into_owned();
                let mut col = vectors.column_mut(i);
                col.axpy(-proj, &vj, 1.0);
            }
        }
        let norm = vectors.column(i).norm();
        if norm > 0.0 {
            vectors.column_mut(i).unscale_mut(norm);
        }
    }
    Ok((values, vectors))
}

/// Orthonormal basis of the orthogonal complement of the column span of
/// `basis` (q×r with orthonormal columns). Returns q×(q−r).
pub fn orthogonal_complement(basis: &Matrix) -> Matrix {
    let (q, r) = basis.shape();
    if r == 0 {
        return Matrix::identity(q, q);
    }
    // Full Householder Q of the span; its trailing q−r columns complete it.
    let qr = QR::new(basis.clone());
    let mut full_t = Matrix::identity(q, q);
    qr.q_tr_mul(&mut full_t);
    full_t.rows(r, q - r).transpose()
}

pub fn frobenius_sq(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum()
}
