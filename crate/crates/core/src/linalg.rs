//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |i, j| m[(i, cols[j])])
}

pub fn select_block(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Number of singular values above `rel_cutoff · σ_max`.
pub fn numerical_rank(m: &DMatrix<f64>, rel_cutoff: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.singular_values();
    let smax = sv.max();
    if smax <= 0.0 || !smax.is_finite() {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_cutoff * smax).count()
}

/// Least-squares solution of `a·x = b` via SVD.
pub fn least_squares(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = a.clone().svd(true, true);
    let eps = 1e-12 * svd.singular_values.max();
    svd.solve(b, eps).map_err(|_| Error::SingularDesign)
}

/// Inverse of a symmetric positive definite matrix, with a rank check.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    if numerical_rank(m, 1e-12) < m.nrows() {
        return Err(Error::SingularDesign);
    }
    match m.clone().cholesky() {
        Some(c) => Ok(c.inverse()),
        None => m.clone().try_inverse().ok_or(Error::SingularDesign),
    }
}

/// Solves `m·x = b` for symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    match m.clone().cholesky() {
        Some(c) => Ok(c.solve(b)),
        None => m.clone().lu().solve(b).ok_or(Error::SingularDesign),
    }
}

/// Schur complement `M22 − M21·M11⁻¹·M12` of the block indexed by `keep`
/// against the block indexed by `eliminate`.
pub fn schur_complement(m: &DMatrix<f64>, keep: &[usize], eliminate: &[usize]) -> Result<DMatrix<f64>> {
    let m22 = select_block(m, keep, keep);
    if eliminate.is_empty() {
        return Ok(m22);
    }
    let m11 = select_block(m, eliminate, eliminate);
    let m12 = select_block(m, eliminate, keep);
    let inv = spd_inverse(&m11)?;
    Ok(&m22 - m12.transpose() * inv * m12)
}

pub fn quad_form(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}

/// `Xᵀ·diag(w)·X`.
pub fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    x.transpose() * xw
}
