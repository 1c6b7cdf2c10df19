//! The ratio estimator on the product-regressor basis, its ridge-regularized
//! variant, the constructed scalar instrument, and the data-driven choice of
//! the ridge penalty by approximate conditional MSE.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{column_covariance, demean_columns};

/// Gate thresholds for weak identification: absolute floor on the complier
/// share and a minimum t-statistic for its sample mean.
pub const WEAK_SHARE_FLOOR: f64 = 1e-3;
pub const WEAK_T_FLOOR: f64 = 2.0;

/// Point estimate with the linear weights that produced it.
#[derive(Clone, Debug)]
pub struct RhoFit {
    pub point: f64,
    pub numerator: f64,
    /// The weighted treatment moment; equals the complier share estimate
    /// when `alpha == 0`.
    pub denominator: f64,
    pub alpha: f64,
}

/// Prepend an intercept column.
pub(crate) fn augment(gamma: &DMatrix<f64>) -> DMatrix<f64> {
    let n = gamma.nrows();
    let mut ga = DMatrix::zeros(n, gamma.ncols() + 1);
    for i in 0..n {
        ga[(i, 0)] = 1.0;
    }
    for c in 0..gamma.ncols() {
        for i in 0..n {
            ga[(i, c + 1)] = gamma[(i, c)];
        }
    }
    ga
}

/// Solve `(Ga'Ga + alpha I) t = rhs` through the QR factor of `Ga` (stacked
/// with `sqrt(alpha) I` when `alpha > 0`), avoiding the squared condition
/// number of the explicit Gram matrix.
fn solve_regularized(ga: &DMatrix<f64>, alpha: f64, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let k1 = ga.ncols();
    let stacked = if alpha > 0.0 {
        let mut m = DMatrix::zeros(ga.nrows() + k1, k1);
        m.view_mut((0, 0), (ga.nrows(), k1)).copy_from(ga);
        let s = alpha.sqrt();
        for c in 0..k1 {
            m[(ga.nrows() + c, c)] = s;
        }
        m
    } else {
        ga.clone()
    };
    let r = stacked.qr().r();
    let max_diag = (0..k1).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    if (0..k1).any(|i| r[(i, i)].abs() <= 1e-12 * max_diag.max(1e-300)) {
        return Err(Error::SingularDesign);
    }
    let half = r.tr_solve_upper_triangular(rhs).ok_or(Error::SingularDesign)?;
    r.solve_upper_triangular(&half).ok_or(Error::SingularDesign)
}

pub(crate) fn weak_gate(share: f64, t_stat: f64) -> Result<()> {
    if share.abs() < WEAK_SHARE_FLOOR || t_stat < WEAK_T_FLOOR {
        return Err(Error::WeakIdentification { share, t_stat });
    }
    Ok(())
}

/// The ratio estimator: weights `(0, lambda')(Ga'Ga + alpha I)^{-1} Ga'`
/// applied to outcome and treatment, with `Ga` the intercept-augmented
/// product design. Errors on a singular design at `alpha = 0` and behind the
/// weak-identification gate on the treatment moment.
pub fn estimate_rho(
    y: &DVector<f64>,
    d: &DVector<f64>,
    gamma: &DMatrix<f64>,
    lambda: &DVector<f64>,
    alpha: f64,
) -> Result<RhoFit> {
    let n = gamma.nrows();
    let k = gamma.ncols();
    if lambda.len() != k {
        return Err(Error::InvalidEstimand(format!(
            "weight vector has {} entries for {} regressors",
            lambda.len(),
            k
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("ridge penalty {alpha} must be finite and >= 0")));
    }
    if n <= k {
        return Err(Error::InvalidData(format!("{n} rows cannot identify {k} regressors")));
    }
    let ga = augment(gamma);
    let mut lt = DVector::zeros(k + 1);
    lt.rows_mut(1, k).copy_from(lambda);
    let t = solve_regularized(&ga, alpha, &lt)?;
    let weights = &ga * &t;
    let numerator = weights.dot(y);
    let denominator = weights.dot(d);

    // Per-observation contributions to the treatment moment drive the gate.
    let contrib: Vec<f64> = (0..n).map(|i| n as f64 * weights[i] * d[i]).collect();
    let mean = denominator;
    let var = contrib.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let t_stat = if var > 0.0 {
        mean.abs() / (var.sqrt() / (n as f64).sqrt())
    } else if mean.abs() > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    // The identification gate is defined on the unpenalized treatment
    // moment, which is the complier-share estimate; under a penalty the
    // denominator shrinks mechanically with alpha (the estimation pipeline
    // gates on the share before reaching here), so only a zero denominator
    // is fatal.
    if alpha == 0.0 {
        weak_gate(denominator, t_stat)?;
    } else if denominator == 0.0 {
        return Err(Error::WeakIdentification { share: denominator, t_stat });
    }

    Ok(RhoFit { point: numerator / denominator, numerator, denominator, alpha })
}

/// The constructed scalar instrument `h_i = lambda' Sigma^{-1} (Gamma_i - mean)`,
/// exactly mean zero with `E_n[Gamma_S h] = lambda_S` for every family member.
pub fn estimate_h(gamma: &DMatrix<f64>, lambda: &DVector<f64>) -> Result<DVector<f64>> {
    if lambda.len() != gamma.ncols() {
        return Err(Error::InvalidEstimand(format!(
            "weight vector has {} entries for {} regressors",
            lambda.len(),
            gamma.ncols()
        )));
    }
    let sigma = column_covariance(gamma);
    let chol = sigma.cholesky().ok_or(Error::SingularCovariance)?;
    let w = chol.solve(lambda);
    let centered = demean_columns(gamma);
    Ok(centered * w)
}

/// Difference-in-means ratio between the all-on and all-off instrument cells.
#[derive(Clone, Debug)]
pub struct WaldFit {
    pub point: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub n_upper: usize,
    pub n_lower: usize,
}

/// The two-cell ratio estimator of the all-compliers effect. Numerically
/// identical to [`estimate_rho`] with all-ones weights and no penalty on any
/// full-support sample.
pub fn wald_acl(y: &DVector<f64>, d: &DVector<f64>, z: &DMatrix<f64>) -> Result<WaldFit> {
    let n = z.nrows();
    let j = z.ncols();
    let (mut sy1, mut sd1, mut n1) = (0.0, 0.0, 0usize);
    let (mut sy0, mut sd0, mut n0) = (0.0, 0.0, 0usize);
    for i in 0..n {
        let ones = (0..j).filter(|&c| z[(i, c)] == 1.0).count();
        if ones == j {
            sy1 += y[i];
            sd1 += d[i];
            n1 += 1;
        } else if ones == 0 {
            sy0 += y[i];
            sd0 += d[i];
            n0 += 1;
        }
    }
    if n1 == 0 {
        return Err(Error::EmptyCell("all instruments on".into()));
    }
    if n0 == 0 {
        return Err(Error::EmptyCell("all instruments off".into()));
    }
    let numerator = sy1 / n1 as f64 - sy0 / n0 as f64;
    let denominator = sd1 / n1 as f64 - sd0 / n0 as f64;
    if denominator == 0.0 {
        return Err(Error::WeakIdentification { share: 0.0, t_stat: 0.0 });
    }
    Ok(WaldFit { point: numerator / denominator, numerator, denominator, n_upper: n1, n_lower: n0 })
}

/// Ridge-penalty choice by scanning the feasible approximate-MSE criterion.
#[derive(Clone, Debug)]
pub struct AlphaSelection {
    pub alpha: f64,
    /// The scanned grid and criterion values, for diagnostics.
    pub trace: Vec<(f64, f64)>,
}

const ALPHA_GRID_POINTS: usize = 60;
const ALPHA_LOG_LO: f64 = -6.0;
const ALPHA_LOG_HI: f64 = 4.0;

/// Approximate conditional MSE of the regularized ratio as a function of the
/// penalty, estimated in one step from the unpenalized fit:
/// `M(a) = lt'(G + aI)^{-1} { n Pi + a^2 b b' } (G + aI)^{-1} lt`.
struct MseCriterion {
    gram: DMatrix<f64>,
    pi: DMatrix<f64>,
    b: DVector<f64>,
    lt: DVector<f64>,
    n: f64,
}

impl MseCriterion {
    fn eval(&self, alpha: f64) -> Result<f64> {
        let k1 = self.gram.ncols();
        let mut m = self.gram.clone();
        for i in 0..k1 {
            m[(i, i)] += alpha;
        }
        let chol = m.cholesky().ok_or(Error::SingularDesign)?;
        let s = chol.solve(&self.lt);
        let quad = (&self.pi * &s).dot(&s);
        let bias = s.dot(&self.b);
        Ok(self.n * quad + alpha * alpha * bias * bias)
    }
}

/// Choose the ridge penalty as the smallest positive local minimizer of the
/// feasible MSE criterion, located on a 60-point log grid spanning
/// `[1e-6, 1e4] x trace(Ga'Ga)/(k+1)` and refined by golden-section search to
/// a relative tolerance of 1e-4. Returns zero when the criterion has no
/// interior local minimum on the grid, or when the unpenalized fit has no
/// residual variation.
pub fn select_alpha_mse(
    y: &DVector<f64>,
    d: &DVector<f64>,
    gamma: &DMatrix<f64>,
    lambda: &DVector<f64>,
) -> Result<AlphaSelection> {
    let n = gamma.nrows();
    let k = gamma.ncols();
    let ga = augment(gamma);
    let mut lt = DVector::zeros(k + 1);
    lt.rows_mut(1, k).copy_from(lambda);

    // Unpenalized coefficient vectors, via the QR factor.
    let qr = ga.clone().qr();
    let r = qr.r();
    let max_diag = (0..k + 1).map(|i| r[(i, i)].abs()).fold(0.0f64, f64::max);
    if (0..k + 1).any(|i| r[(i, i)].abs() <= 1e-12 * max_diag.max(1e-300)) {
        return Err(Error::SingularDesign);
    }
    let q = qr.q();
    let beta_y = r.solve_upper_triangular(&(q.transpose() * y)).ok_or(Error::SingularDesign)?;
    let beta_d = r.solve_upper_triangular(&(q.transpose() * d)).ok_or(Error::SingularDesign)?;
    let theta_y = lt.dot(&beta_y);
    let theta_d = lt.dot(&beta_d);
    if theta_d == 0.0 {
        return Err(Error::WeakIdentification { share: 0.0, t_stat: 0.0 });
    }
    let rho0 = theta_y / theta_d;

    let resid_y = y - &ga * &beta_y;
    let resid_d = d - &ga * &beta_d;
    let u: DVector<f64> = &resid_y - rho0 * &resid_d;
    let scale_u = y.amax() + rho0.abs() * d.amax() + 1.0;
    if u.amax() <= 1e-12 * scale_u {
        return Ok(AlphaSelection { alpha: 0.0, trace: Vec::new() });
    }

    // Pi = E_n[u_i^2 Ga_i Ga_i'].
    let mut weighted = ga.clone();
    for i in 0..n {
        let ui = u[i];
        for c in 0..k + 1 {
            weighted[(i, c)] *= ui;
        }
    }
    let pi = weighted.transpose() * &weighted / n as f64;
    let b = &beta_y - rho0 * &beta_d;
    let gram = ga.transpose() * &ga;
    let scale = gram.trace() / (k as f64 + 1.0);
    let crit = MseCriterion { gram, pi, b, lt, n: n as f64 };

    let mut trace = Vec::with_capacity(ALPHA_GRID_POINTS);
    for i in 0..ALPHA_GRID_POINTS {
        let e = ALPHA_LOG_LO
            + (ALPHA_LOG_HI - ALPHA_LOG_LO) * i as f64 / (ALPHA_GRID_POINTS as f64 - 1.0);
        let alpha = scale * 10f64.powf(e);
        trace.push((alpha, crit.eval(alpha)?));
    }

    let mut chosen = 0.0;
    for i in 1..ALPHA_GRID_POINTS - 1 {
        if trace[i].1 <= trace[i - 1].1 && trace[i].1 <= trace[i + 1].1 {
            chosen = golden_section(&crit, trace[i - 1].0, trace[i + 1].0)?;
            break;
        }
    }
    Ok(AlphaSelection { alpha: chosen, trace })
}

/// Golden-section minimization on the log scale to relative tolerance 1e-4.
fn golden_section(crit: &MseCriterion, lo: f64, hi: f64) -> Result<f64> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lo.ln(), hi.ln());
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = crit.eval(c.exp())?;
    let mut fd = crit.eval(d.exp())?;
    while (b - a).abs() > 1e-4 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = crit.eval(c.exp())?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = crit.eval(d.exp())?;
        }
    }
    Ok(((a + b) / 2.0).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Deterministic full-support test sample with a strong treatment response.
    fn sample(j: usize, per_cell: usize) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
        let cells = 1usize << j;
        let n = cells * per_cell;
        let mut z = DMatrix::zeros(n, j);
        let mut d = DVector::zeros(n);
        let mut y = DVector::zeros(n);
        let mut state = 88172645463325252u64;
        let mut unif = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut row = 0;
        for cell in 0..cells {
            for _ in 0..per_cell {
                for b in 0..j {
                    z[(row, b)] = f64::from(u8::from(cell & (1 << b) != 0));
                }
                let treated = unif() < 0.1 + 0.8 * (cell.count_ones() as f64 / j as f64);
                d[row] = f64::from(treated);
                y[row] = 2.0 * d[row] + unif();
                row += 1;
            }
        }
        (y, d, z)
    }

    #[test]
    fn single_instrument_reduces_to_the_wald_ratio() {
        let (y, d, z) = sample(1, 60);
        let gamma = z.clone();
        let fit = estimate_rho(&y, &d, &gamma, &DVector::from_element(1, 1.0), 0.0).unwrap();
        let wald = wald_acl(&y, &d, &z).unwrap();
        assert!((fit.point - wald.point).abs() <= 1e-12 * wald.point.abs());
        assert!((fit.denominator - wald.denominator).abs() < 1e-12);
    }

    #[test]
    fn all_ones_weights_match_the_two_cell_ratio() {
        for j in [2usize, 3] {
            let (y, d, z) = sample(j, 40);
            let fam = crate::combinatorics::canonical_subsets(j);
            let gamma = crate::design::build_gamma(&z, &fam);
            let lambda = DVector::from_element(fam.len(), 1.0);
            let fit = estimate_rho(&y, &d, &gamma, &lambda, 0.0).unwrap();
            let wald = wald_acl(&y, &d, &z).unwrap();
            let rel = (fit.point - wald.point).abs() / wald.point.abs();
            assert!(rel <= 1e-10, "j={j} rel={rel:e}");
        }
    }

    #[test]
    fn h_has_zero_mean_and_matches_the_weight_targets() {
        let (_, _, z) = sample(3, 25);
        let fam = crate::combinatorics::canonical_subsets(3);
        let gamma = crate::design::build_gamma(&z, &fam);
        let lambda = DVector::from_vec(vec![1.0, 0.5, 0.0, 0.25, 1.0, 0.0, 0.75]);
        let h = estimate_h(&gamma, &lambda).unwrap();
        let n = h.len() as f64;
        assert!(h.sum().abs() / n <= 1e-12);
        for (l, _) in fam.iter().enumerate() {
            let moment = (0..h.len()).map(|i| gamma[(i, l)] * h[i]).sum::<f64>() / n;
            assert!((moment - lambda[l]).abs() <= 1e-8, "l={l}");
        }
    }

    #[test]
    fn scalar_h_is_the_standardized_instrument() {
        let (_, _, z) = sample(1, 50);
        let gamma = z.clone();
        let h = estimate_h(&gamma, &DVector::from_element(1, 1.0)).unwrap();
        let mean = z.column(0).sum() / z.nrows() as f64;
        let var = z.column(0).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.nrows() as f64;
        for i in 0..z.nrows() {
            let expected = (z[(i, 0)] - mean) / var;
            assert!((h[i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_zero_h_and_fail_the_gate() {
        let (y, d, z) = sample(2, 30);
        let fam = crate::combinatorics::canonical_subsets(2);
        let gamma = crate::design::build_gamma(&z, &fam);
        let lambda = DVector::zeros(3);
        let h = estimate_h(&gamma, &lambda).unwrap();
        assert_eq!(h.amax(), 0.0);
        assert!(matches!(
            estimate_rho(&y, &d, &gamma, &lambda, 0.0),
            Err(Error::WeakIdentification { .. })
        ));
    }

    #[test]
    fn large_penalty_approaches_the_unprojected_ratio() {
        let (y, d, z) = sample(2, 30);
        let fam = crate::combinatorics::canonical_subsets(2);
        let gamma = crate::design::build_gamma(&z, &fam);
        let lambda = DVector::from_element(3, 1.0);
        let fit = estimate_rho(&y, &d, &gamma, &lambda, 1e12).unwrap();
        let num: f64 = (0..3).map(|c| gamma.column(c).dot(&y)).sum();
        let den: f64 = (0..3).map(|c| gamma.column(c).dot(&d)).sum();
        assert!((fit.point - num / den).abs() < 1e-6);
    }

    #[test]
    fn penalty_path_is_continuous_at_zero() {
        let (y, d, z) = sample(2, 50);
        let fam = crate::combinatorics::canonical_subsets(2);
        let gamma = crate::design::build_gamma(&z, &fam);
        let lambda = DVector::from_element(3, 1.0);
        let p0 = estimate_rho(&y, &d, &gamma, &lambda, 0.0).unwrap().point;
        let p1 = estimate_rho(&y, &d, &gamma, &lambda, 1e-8).unwrap().point;
        assert!((p0 - p1).abs() < 1e-6);
    }

    #[test]
    fn noiseless_outcome_selects_zero_penalty() {
        let (_, d, z) = sample(2, 30);
        let fam = crate::combinatorics::canonical_subsets(2);
        let gamma = crate::design::build_gamma(&z, &fam);
        let y = 3.0 * &d;
        let lambda = DVector::from_element(3, 1.0);
        let sel = select_alpha_mse(&y, &d, &gamma, &lambda).unwrap();
        assert_eq!(sel.alpha, 0.0);
    }

    #[test]
    fn singular_design_is_reported() {
        // Z2 duplicates Z1.
        let n = 40;
        let z = DMatrix::from_fn(n, 2, |i, _| f64::from(u8::from(i % 2 == 0)));
        let fam = crate::combinatorics::canonical_subsets(2);
        let gamma = crate::design::build_gamma(&z, &fam);
        let y = DVector::from_fn(n, |i, _| i as f64);
        let d = DVector::from_fn(n, |i, _| f64::from(u8::from(i % 2 == 0)));
        assert!(matches!(
            estimate_rho(&y, &d, &gamma, &DVector::from_element(3, 1.0), 0.0),
            Err(Error::SingularDesign)
        ));
        // A positive penalty makes the solve well-posed again.
        assert!(estimate_rho(&y, &d, &gamma, &DVector::from_element(3, 1.0), 0.5).is_ok());
    }
}
