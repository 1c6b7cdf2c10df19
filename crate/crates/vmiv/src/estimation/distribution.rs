//! Potential-outcome moments among the complier group, distributional
//! effects, and worst-case bounds for the unconditional average effects when
//! outcomes are bounded.

use nalgebra::{DMatrix, DVector};

use crate::combinatorics::canonical_subsets;
use crate::design::Interval;
use crate::error::{Error, Result};
use crate::sets::InstrumentSet;

use super::lambda::lambda_for;
use super::rho::{estimate_rho, wald_acl, WEAK_SHARE_FLOOR};
use super::EstimandKind;

/// Sample analog of `E[f(Y(d)) | complier]`:
/// `(-1)^{d+1} E_n[f(Y) h 1(D=d)] / E_n[h D]`.
pub fn potential_outcome_moment<F>(
    f: F,
    arm: u8,
    y: &DVector<f64>,
    d: &DVector<f64>,
    h: &DVector<f64>,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if arm > 1 {
        return Err(Error::InvalidEstimand(format!("treatment arm {arm} must be 0 or 1")));
    }
    let n = y.len() as f64;
    let share = h.dot(d) / n;
    if share.abs() < WEAK_SHARE_FLOOR {
        return Err(Error::WeakIdentification { share, t_stat: 0.0 });
    }
    let sign = if arm == 1 { 1.0 } else { -1.0 };
    let moment = (0..y.len())
        .map(|i| {
            let in_arm = (d[i] as u8) == arm;
            if in_arm {
                f(y[i]) * h[i]
            } else {
                0.0
            }
        })
        .sum::<f64>()
        / n;
    Ok(sign * moment / share)
}

/// Complier potential-outcome distribution estimates over a grid.
#[derive(Clone, Debug)]
pub struct CdfEffects {
    pub grid: Vec<f64>,
    /// Raw estimates of `F_{Y(1)|complier}` and `F_{Y(0)|complier}`.
    pub treated: Vec<f64>,
    pub untreated: Vec<f64>,
    /// Distributional effect `F1 - F0` from the raw estimates.
    pub effect: Vec<f64>,
    /// Monotone-rearranged (running max) and clipped variants.
    pub treated_rearranged: Vec<f64>,
    pub untreated_rearranged: Vec<f64>,
}

fn rearrange(raw: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(raw.len());
    let mut running = f64::NEG_INFINITY;
    for &v in raw {
        running = running.max(v);
        out.push(running.clamp(0.0, 1.0));
    }
    out
}

/// Evaluate both complier potential-outcome distribution functions on a
/// sorted grid. Raw estimates may be locally non-monotone; rearranged
/// variants are reported alongside.
pub fn cdf_treatment_effects(
    y: &DVector<f64>,
    d: &DVector<f64>,
    h: &DVector<f64>,
    grid: &[f64],
) -> Result<CdfEffects> {
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidData("evaluation grid must be sorted".into()));
    }
    let mut treated = Vec::with_capacity(grid.len());
    let mut untreated = Vec::with_capacity(grid.len());
    for &point in grid {
        treated.push(potential_outcome_moment(|v| f64::from(v <= point), 1, y, d, h)?);
        untreated.push(potential_outcome_moment(|v| f64::from(v <= point), 0, y, d, h)?);
    }
    let effect = treated.iter().zip(&untreated).map(|(a, b)| a - b).collect();
    let treated_rearranged = rearrange(&treated);
    let untreated_rearranged = rearrange(&untreated);
    Ok(CdfEffects { grid: grid.to_vec(), treated, untreated, effect, treated_rearranged, untreated_rearranged })
}

/// Worst-case identified intervals for the unconditional average effects
/// under bounded outcomes, with the treated/untreated analogs.
#[derive(Clone, Debug)]
pub struct AteBounds {
    pub ate: Interval,
    pub att: Option<Interval>,
    pub atu: Option<Interval>,
    pub p_always: f64,
    pub p_never: f64,
    pub acl: f64,
}

/// Combine the point-identified complier effect with envelope terms for the
/// always- and never-taker contributions:
/// `ATE = p_a Delta_a + p_n Delta_n + (1 - p_a - p_n) ACL`, where
/// `p_n Delta_n` and `p_a Delta_a` are bracketed using the outcome bounds
/// and the observed extreme-cell moments.
pub fn ate_bounds(
    y: &DVector<f64>,
    d: &DVector<f64>,
    z: &DMatrix<f64>,
    y_lo: f64,
    y_hi: f64,
) -> Result<AteBounds> {
    let n = z.nrows();
    let j = z.ncols();
    let y_min = y.min();
    let y_max = y.max();
    if y_lo > y_min || y_hi < y_max {
        return Err(Error::InvalidData(format!(
            "outcome bounds [{y_lo}, {y_hi}] do not contain the sample range [{y_min}, {y_max}]"
        )));
    }

    let wald = wald_acl(y, d, z)?;
    let acl = wald.point;

    let (mut s_da, mut s_yda, mut n_lo) = (0.0, 0.0, 0usize);
    let (mut s_un, mut s_yun, mut n_up) = (0.0, 0.0, 0usize);
    for i in 0..n {
        let ones = (0..j).filter(|&c| z[(i, c)] == 1.0).count();
        if ones == 0 {
            s_da += d[i];
            s_yda += y[i] * d[i];
            n_lo += 1;
        } else if ones == j {
            s_un += 1.0 - d[i];
            s_yun += y[i] * (1.0 - d[i]);
            n_up += 1;
        }
    }
    let p_always = s_da / n_lo as f64;
    let p_never = s_un / n_up as f64;
    let at_moment = s_yda / n_lo as f64; // E_n[Y D | all off]
    let nt_moment = s_yun / n_up as f64; // E_n[Y (1-D) | all on]

    let at_term = Interval { lo: at_moment - p_always * y_hi, hi: at_moment - p_always * y_lo };
    let nt_term = Interval { lo: p_never * y_lo - nt_moment, hi: p_never * y_hi - nt_moment };
    let mid = (1.0 - p_always - p_never) * acl;
    let ate = Interval { lo: at_term.lo + nt_term.lo + mid, hi: at_term.hi + nt_term.hi + mid };

    // Treated/untreated analogs reuse the set-effect estimators on the full
    // instrument set; reported when the relevant arm is identified.
    let family = canonical_subsets(j);
    let gamma = crate::design::build_gamma(z, &family);
    let data = crate::design::Dataset::new(y.clone(), d.clone(), z.clone(), None)?;
    let full = InstrumentSet::full(j);
    let d_mean = d.mean();

    let att = if d_mean > 0.0 {
        lambda_for(&EstimandKind::Slatt(full), &data, &family)
            .and_then(|l| estimate_rho(y, d, &gamma, &l, 0.0))
            .ok()
            .map(|fit| {
                let treated_compliers = d_mean - p_always;
                Interval {
                    lo: (at_term.lo + treated_compliers * fit.point) / d_mean,
                    hi: (at_term.hi + treated_compliers * fit.point) / d_mean,
                }
            })
    } else {
        None
    };
    let atu = if d_mean < 1.0 {
        lambda_for(&EstimandKind::Slatu(full), &data, &family)
            .and_then(|l| estimate_rho(y, d, &gamma, &l, 0.0))
            .ok()
            .map(|fit| {
                let untreated_compliers = (1.0 - d_mean) - p_never;
                Interval {
                    lo: (nt_term.lo + untreated_compliers * fit.point) / (1.0 - d_mean),
                    hi: (nt_term.hi + untreated_compliers * fit.point) / (1.0 - d_mean),
                }
            })
    } else {
        None
    };

    Ok(AteBounds { ate, att, atu, p_always, p_never, acl })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::estimate_h;

    fn sample() -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
        let n = 320;
        let mut state = 0x51b3a5u64;
        let mut unif = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let mut z = DMatrix::zeros(n, 2);
        let mut d = DVector::zeros(n);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let z1 = f64::from(u8::from(unif() < 0.5));
            let z2 = f64::from(u8::from(unif() < 0.5));
            z[(i, 0)] = z1;
            z[(i, 1)] = z2;
            d[i] = f64::from(u8::from(unif() < 0.1 + 0.4 * z1 + 0.4 * z2));
            y[i] = 1.0 + 2.0 * d[i] + 0.5 * (unif() - 0.5);
        }
        (y, d, z)
    }

    #[test]
    fn arm_masses_are_one_exactly() {
        let (y, d, z) = sample();
        let family = canonical_subsets(2);
        let gamma = crate::design::build_gamma(&z, &family);
        let h = estimate_h(&gamma, &DVector::from_element(3, 1.0)).unwrap();
        let m1 = potential_outcome_moment(|_| 1.0, 1, &y, &d, &h).unwrap();
        let m0 = potential_outcome_moment(|_| 1.0, 0, &y, &d, &h).unwrap();
        assert!((m1 - 1.0).abs() < 1e-10);
        assert!((m0 - 1.0).abs() < 1e-10);
    }

    #[test]
    fn identity_moments_difference_equals_the_point_estimate() {
        let (y, d, z) = sample();
        let family = canonical_subsets(2);
        let gamma = crate::design::build_gamma(&z, &family);
        let lambda = DVector::from_element(3, 1.0);
        let h = estimate_h(&gamma, &lambda).unwrap();
        let fit = estimate_rho(&y, &d, &gamma, &lambda, 0.0).unwrap();
        let t1 = potential_outcome_moment(|v| v, 1, &y, &d, &h).unwrap();
        let t0 = potential_outcome_moment(|v| v, 0, &y, &d, &h).unwrap();
        assert!((t1 - t0 - fit.point).abs() < 1e-10);
    }

    #[test]
    fn cdf_boundaries_and_rearrangement() {
        let (y, d, z) = sample();
        let family = canonical_subsets(2);
        let gamma = crate::design::build_gamma(&z, &family);
        let h = estimate_h(&gamma, &DVector::from_element(3, 1.0)).unwrap();
        let lo = y.min() - 1.0;
        let hi = y.max() + 1.0;
        let grid = vec![lo, 1.5, 2.0, 2.5, hi];
        let cdf = cdf_treatment_effects(&y, &d, &h, &grid).unwrap();
        assert!(cdf.treated[0].abs() < 1e-9);
        assert!(cdf.untreated[0].abs() < 1e-9);
        assert!((cdf.treated[4] - 1.0).abs() < 1e-9);
        assert!((cdf.untreated[4] - 1.0).abs() < 1e-9);
        for w in cdf.treated_rearranged.windows(2) {
            assert!(w[0] <= w[1]);
        }
        assert!(cdf.treated_rearranged.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(cdf_treatment_effects(&y, &d, &h, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn bounds_collapse_without_constant_groups() {
        // No always-takers at all-off, no never-takers at all-on.
        let (y, d, z) = {
            let n = 200;
            let mut z = DMatrix::zeros(n, 2);
            let mut d = DVector::zeros(n);
            let mut y = DVector::zeros(n);
            for i in 0..n {
                let cell = i % 4;
                z[(i, 0)] = f64::from(u8::from(cell & 1 != 0));
                z[(i, 1)] = f64::from(u8::from(cell & 2 != 0));
                d[i] = f64::from(u8::from(cell == 3));
                y[i] = 1.0 + d[i] + 0.01 * (i % 7) as f64;
            }
            (y, d, z)
        };
        let b = ate_bounds(&y, &d, &z, -10.0, 10.0).unwrap();
        assert_eq!(b.p_always, 0.0);
        assert_eq!(b.p_never, 0.0);
        assert!((b.ate.lo - b.acl).abs() < 1e-12);
        assert!((b.ate.hi - b.acl).abs() < 1e-12);
    }

    #[test]
    fn wider_outcome_bounds_weakly_widen_the_interval() {
        let (y, d, z) = sample();
        let tight = ate_bounds(&y, &d, &z, y.min(), y.max()).unwrap();
        let wide = ate_bounds(&y, &d, &z, y.min() - 5.0, y.max() + 5.0).unwrap();
        assert!(wide.ate.lo <= tight.ate.lo + 1e-12);
        assert!(wide.ate.hi >= tight.ate.hi - 1e-12);
        assert!(ate_bounds(&y, &d, &z, y.min() + 0.5, y.max()).is_err());
    }
}
