//! Small solver helpers shared by the design diagnostics and the estimator.
//! All solves go through orthogonal or Cholesky decompositions; no explicit
//! matrix inversion.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Least-squares coefficients of `y` on the columns of `w` via QR.
pub(crate) fn ols(w: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let qr = w.clone().qr();
    let r = qr.r();
    let max_diag = (0..r.nrows()).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    if (0..r.nrows()).any(|i| r[(i, i)].abs() <= 1e-12 * max_diag.max(1e-300)) {
        return Err(Error::SingularDesign);
    }
    let qty = qr.q().transpose() * y;
    r.solve_upper_triangular(&qty).ok_or(Error::SingularDesign)
}

/// OLS with an HC1 heteroscedasticity-robust coefficient covariance.
pub(crate) fn ols_robust(
    w: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = w.nrows();
    let k = w.ncols();
    let beta = ols(w, y)?;
    let resid = y - w * &beta;
    // (W'W)^{-1} W' diag(e^2) W (W'W)^{-1}, scaled by n/(n-k).
    let mut we = w.clone();
    for i in 0..n {
        let e = resid[i];
        for j in 0..k {
            we[(i, j)] *= e;
        }
    }
    let meat = we.transpose() * &we;
    let gram = w.transpose() * w;
    let chol = gram.cholesky().ok_or(Error::SingularDesign)?;
    let bread = chol.solve(&meat);
    let mut vcov = chol.solve(&bread.transpose());
    if n > k {
        vcov *= n as f64 / (n - k) as f64;
    }
    Ok((beta, vcov))
}

/// Sample covariance of the columns of `m`, normalized by `n`.
pub(crate) fn column_covariance(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let means = m.row_mean();
    let mut centered = m.clone();
    for j in 0..m.ncols() {
        let mu = means[j];
        for i in 0..m.nrows() {
            centered[(i, j)] -= mu;
        }
    }
    (centered.transpose() * centered) / n
}

/// Center the columns of `m` at their sample means.
pub(crate) fn demean_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let means = m.row_mean();
    let mut out = m.clone();
    for j in 0..m.ncols() {
        let mu = means[j];
        for i in 0..m.nrows() {
            out[(i, j)] -= mu;
        }
    }
    out
}
