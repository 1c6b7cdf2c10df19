//! Asymptotic standard errors for the ratio estimator.
//!
//! The estimator solves the moment system stacking (i) the instrumented
//! outcome equation `h(Z)(Y - rho D - a)`, (ii) the intercept moment, and
//! (iii) the nuisance moments defining `h`: the mean and covariance of the
//! product regressors and the weight-vector moments. The variance is the
//! top-left element of the usual Jacobian-inverse sandwich over that system.
//! With the sample nuisance Jacobian equal to minus the identity and the
//! sample means of `h` and of the residual exactly zero, solving the
//! transposed Jacobian against the first unit vector collapses to a single
//! corrected influence series, which is what is accumulated here.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{column_covariance, demean_columns};

/// Sandwich standard error of the ratio estimator at `point`.
///
/// `weight_obs` holds the per-observation simple-group weights whose sample
/// means form the target vector; pass `None` when the weight vector is
/// nonrandom (custom vectors, or estimands whose weights do not depend on
/// the instrument distribution).
pub fn sandwich_se(
    y: &DVector<f64>,
    d: &DVector<f64>,
    gamma: &DMatrix<f64>,
    weight_obs: Option<&DMatrix<f64>>,
    lambda: &DVector<f64>,
    point: f64,
) -> Result<f64> {
    let n = y.len();
    let k = gamma.ncols();
    if lambda.len() != k {
        return Err(Error::InvalidEstimand("weight vector length mismatch".into()));
    }
    let nf = n as f64;
    let centered = demean_columns(gamma);
    let sigma = column_covariance(gamma);
    let chol = sigma.cholesky().ok_or(Error::SingularCovariance)?;
    let w = chol.solve(lambda);
    let h = &centered * &w;

    let share = h.dot(d) / nf;
    if share == 0.0 {
        return Err(Error::SingularMoments);
    }

    let y_bar = y.mean();
    let d_bar = d.mean();
    let u = DVector::from_fn(n, |i, _| (y[i] - y_bar) - point * (d[i] - d_bar));

    // q = E_n[(Gamma - mean) u]; v = Sigma^{-1} q.
    let q = centered.transpose() * &u / nf;
    let v = chol.solve(&q);
    let t = &centered * &v;

    let lambda_v = lambda.dot(&v);
    let mut acc = 0.0;
    for i in 0..n {
        let weight_term = match weight_obs {
            Some(c) => {
                let mut dot = 0.0;
                for l in 0..k {
                    dot += v[l] * (c[(i, l)] - lambda[l]);
                }
                dot
            }
            None => 0.0,
        };
        let s = h[i] * u[i] - h[i] * t[i] + lambda_v + weight_term;
        acc += s * s;
    }
    let variance = acc / nf / (share * share);
    if !variance.is_finite() {
        return Err(Error::SingularMoments);
    }
    Ok((variance / nf).sqrt())
}

/// Bootstrap distribution summary.
#[derive(Clone, Debug)]
pub struct BootstrapSummary {
    pub std_error: f64,
    pub ci95: (f64, f64),
    /// Draws excluded because the refit failed (weak identification or a
    /// singular resampled design).
    pub excluded: usize,
    pub replications: usize,
}

/// Interpolated quantile of a sorted slice.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n as f64 - 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Summarize bootstrap replicate points into a standard error and a
/// percentile 95% interval.
pub(crate) fn summarize_bootstrap(points: Vec<f64>, excluded: usize) -> Result<BootstrapSummary> {
    let b = points.len();
    if b < 2 {
        return Err(Error::InvalidData(format!(
            "only {b} bootstrap draws produced an estimate ({excluded} excluded)"
        )));
    }
    let mean = points.iter().sum::<f64>() / b as f64;
    let var = points.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (b as f64 - 1.0);
    let mut sorted = points;
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite bootstrap points"));
    Ok(BootstrapSummary {
        std_error: var.sqrt(),
        ci95: (quantile(&sorted, 0.025), quantile(&sorted, 0.975)),
        excluded,
        replications: b + excluded,
    })
}
