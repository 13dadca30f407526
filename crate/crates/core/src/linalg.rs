//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `log(2π)`.
pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Symmetric square root factor `F` with `F Fᵀ = S` for a positive
/// semi-definite `S`. Uses Cholesky when it succeeds and a clipped
/// eigen-decomposition otherwise.
pub fn psd_factor(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if s.nrows() != s.ncols() {
        return Err(Error::validation("covariance matrix is not square"));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("covariance matrix has non-finite entries"));
    }
    if let Some(ch) = s.clone().cholesky() {
        return Ok(ch.l());
    }
    let sym = (s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1.0);
    if eig.eigenvalues.iter().any(|&v| v < -1e-10 * scale) {
        return Err(Error::numerical("covariance matrix is not positive semi-definite"));
    }
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals))
}

/// Log density of `N(mean, cov)` at `x` via a dense Cholesky factorization.
/// Returns `None` when `cov` is not positive definite.
pub fn mvn_logpdf_dense(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Option<f64> {
    let n = x.len() as f64;
    let ch = cov.clone().cholesky()?;
    let diff = x - mean;
    let sol = ch.l().solve_lower_triangular(&diff)?;
    let log_det: f64 = ch.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    Some(-0.5 * (n * LN_2PI + log_det + sol.dot(&sol)))
}

/// Column-major flattening of a square matrix into row-major order.
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn from_row_major(n: usize, data: &[f64]) -> Result<DMatrix<f64>> {
    if data.len() != n * n {
        return Err(Error::validation(format!(
            "expected {} entries for a {n}x{n} matrix, got {}",
            n * n,
            data.len()
        )));
    }
    Ok(DMatrix::from_row_slice(n, n, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_reconstructs_singular_psd() {
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let s = &v * v.transpose();
        let f = psd_factor(&s).unwrap();
        assert!((&f * f.transpose() - &s).abs().max() < 1e-12);
    }

    #[test]
    fn dense_logpdf_standard_normal() {
        let x = DVector::from_vec(vec![0.0]);
        let lp = mvn_logpdf_dense(&x, &x, &DMatrix::identity(1, 1)).unwrap();
        assert!((lp - (-0.918_938_533_204_672_7)).abs() < 1e-14);
    }
}
