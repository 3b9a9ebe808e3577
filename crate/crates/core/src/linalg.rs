//! Dense `f64` helpers backed by nalgebra.
//!
//! Matrices crossing this boundary are row-major `Vec<f64>` buffers.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) fn to_dmatrix(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

pub(crate) fn from_dmatrix(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.push(m[(r, c)]);
        }
    }
    out
}

/// Eigendecomposition of a symmetric matrix, eigenvalues sorted descending.
///
/// Each eigenvector is flipped so that its largest-magnitude entry is
/// positive. Returns `(values, vectors)` with `vectors` an `n x n` matrix
/// whose columns are the eigenvectors.
pub(crate) fn symmetric_eigen_desc(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).into_owned();
        fix_sign(col.as_mut_slice());
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Flips `v` in place so its largest-magnitude entry is positive.
pub(crate) fn fix_sign(v: &mut [f64]) {
    let mut best = 0.0f64;
    for &x in v.iter() {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// `(A A^T)^{-1/2} A` for a square or wide `A` with full row rank.
pub(crate) fn symmetric_decorrelation(a: &DMatrix<f64>) -> DMatrix<f64> {
    let aat = a * a.transpose();
    let eig = SymmetricEigen::new(aat);
    let inv_sqrt = eig.eigenvalues.map(|l| 1.0 / l.max(1e-300).sqrt());
    let q = &eig.eigenvectors;
    q * DMatrix::from_diagonal(&inv_sqrt) * q.transpose() * a
}

/// Solves `A X = B` for symmetric positive definite `A`.
pub(crate) fn solve_spd(a: DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let max_diag = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Singular("matrix is not positive definite".into()))?;
    let l = chol.l();
    let min_pivot = (0..n).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
    if min_pivot <= max_diag * 1e-13 {
        return Err(Error::Singular(format!(
            "ill-conditioned system (pivot {min_pivot:.3e} vs scale {max_diag:.3e})"
        )));
    }
    Ok(chol.solve(b))
}

/// Moore-Penrose pseudoinverse of a real `rows x cols` matrix (row-major in, row-major out).
pub(crate) fn pinv(rows: usize, cols: usize, data: &[f64]) -> Vec<f64> {
    let m = to_dmatrix(rows, cols, data);
    let p = m
        .pseudo_inverse(1e-12)
        .unwrap_or_else(|_| DMatrix::zeros(cols, rows));
    from_dmatrix(&p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_sorted_and_signed() {
        let m = to_dmatrix(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (vals, vecs) = symmetric_eigen_desc(m);
        assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 1.0).abs() < 1e-12);
        for c in 0..2 {
            let col = vecs.column(c);
            let big = col.iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
            assert!(big > 0.0);
        }
    }

    #[test]
    fn decorrelation_gives_orthonormal_rows() {
        let a = to_dmatrix(3, 3, &[1.0, 0.2, 0.0, 0.3, 1.0, 0.1, 0.0, 0.5, 2.0]);
        let w = symmetric_decorrelation(&a);
        let wwt = &w * w.transpose();
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((wwt[(i, j)] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_detected() {
        let a = to_dmatrix(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_element(2, 1, 1.0);
        assert!(solve_spd(a, &b).is_err());
    }
}
