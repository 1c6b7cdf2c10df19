//! Estimand specification and the estimation pipeline: weight vectors,
//! the regularized ratio estimator, standard errors, controls, and the
//! complier distributional summaries.

mod controls;
mod distribution;
pub mod lambda;
mod rho;
mod variance;

pub use controls::{partial_out_controls, Residualized};
pub use distribution::{ate_bounds, cdf_treatment_effects, potential_outcome_moment, AteBounds, CdfEffects};
pub use lambda::{group_weight, lambda_for, simple_weight, weight_observations, weight_table_for};
pub use rho::{
    estimate_h, estimate_rho, select_alpha_mse, wald_acl, AlphaSelection, RhoFit, WaldFit,
    WEAK_SHARE_FLOOR, WEAK_T_FLOOR,
};
pub use variance::{sandwich_se, BootstrapSummary};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::design::{build_gamma, Dataset, InstrumentDesign};
use crate::error::{Error, Result};
use crate::sets::InstrumentSet;

/// Which complier average is targeted.
#[derive(Clone, Debug, PartialEq)]
pub enum EstimandKind {
    /// Average effect among all generalized compliers.
    Acl,
    /// Average effect among units switched by turning the set on, others at
    /// their realized values.
    Slate(InstrumentSet),
    /// The treated refinement of [`EstimandKind::Slate`].
    Slatt(InstrumentSet),
    /// The untreated refinement of [`EstimandKind::Slate`].
    Slatu(InstrumentSet),
    /// Average effect among units switched by one instrument at a fixed
    /// assignment of the others (`context` holds the switched-on ones).
    Pte { instrument: usize, context: InstrumentSet },
    /// A caller-supplied weight vector over the subset family.
    CustomLambda(Vec<f64>),
}

impl EstimandKind {
    pub fn validate(&self, j: usize) -> Result<()> {
        match self {
            EstimandKind::Acl | EstimandKind::CustomLambda(_) => Ok(()),
            EstimandKind::Slate(s) | EstimandKind::Slatt(s) | EstimandKind::Slatu(s) => {
                if s.is_empty() {
                    return Err(Error::InvalidEstimand("instrument set must be nonempty".into()));
                }
                if !s.fits(j) {
                    return Err(Error::InvalidEstimand(format!(
                        "instrument set {s} references instruments beyond 1..={j}"
                    )));
                }
                Ok(())
            }
            EstimandKind::Pte { instrument, context } => {
                if *instrument < 1 || *instrument > j {
                    return Err(Error::InstrumentIndexOutOfRange(*instrument, j));
                }
                if !context.fits(j) {
                    return Err(Error::InvalidEstimand(format!(
                        "context {context} references instruments beyond 1..={j}"
                    )));
                }
                if context.contains(*instrument) {
                    return Err(Error::InvalidEstimand(format!(
                        "context assigns the switched instrument {instrument}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Grammar form, e.g. `slate:1,3` or `pte:1@z2=1,z3=0`.
    pub fn label(&self, j: usize) -> String {
        let list = |s: &InstrumentSet| {
            s.indices().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
        };
        match self {
            EstimandKind::Acl => "acl".into(),
            EstimandKind::Slate(s) => format!("slate:{}", list(s)),
            EstimandKind::Slatt(s) => format!("slatt:{}", list(s)),
            EstimandKind::Slatu(s) => format!("slatu:{}", list(s)),
            EstimandKind::Pte { instrument, context } => {
                let ctx = (1..=j)
                    .filter(|i| i != instrument)
                    .map(|i| format!("z{i}={}", u8::from(context.contains(i))))
                    .collect::<Vec<_>>()
                    .join(",");
                format!("pte:{instrument}@{ctx}")
            }
            EstimandKind::CustomLambda(v) => format!(
                "lambda:{}",
                v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
            ),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Regularization {
    None,
    Fixed(f64),
    AutoMse,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum VarianceMethod {
    None,
    Sandwich,
    Bootstrap { replications: usize, seed: u64 },
}

/// A complete estimation request.
#[derive(Clone, Debug)]
pub struct EstimandSpec {
    pub kind: EstimandKind,
    pub regularization: Regularization,
    pub variance: VarianceMethod,
}

impl EstimandSpec {
    pub fn new(kind: EstimandKind) -> Self {
        EstimandSpec { kind, regularization: Regularization::AutoMse, variance: VarianceMethod::Sandwich }
    }
}

/// Structured warning attached to a result.
#[derive(Clone, Debug, Serialize)]
pub struct Warning {
    pub code: String,
    pub detail: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Diagnostics {
    /// Weighted treatment moment of the final fit (equals the complier share
    /// when no penalty is used).
    pub denominator: f64,
    pub share_t_stat: f64,
    pub h_mean: f64,
    pub h_sd: f64,
    pub dropped_controls: Vec<usize>,
    pub bootstrap_excluded: Option<usize>,
}

/// Point estimate with inference and bookkeeping.
#[derive(Clone, Debug, Serialize)]
pub struct EstimateResult {
    pub estimand: String,
    pub point: f64,
    #[serde(rename = "se")]
    pub std_error: Option<f64>,
    pub ci95: Option<[f64; 2]>,
    /// Estimated share of the population in the conditioning complier group.
    pub complier_share: f64,
    pub alpha: f64,
    pub n: usize,
    pub warnings: Vec<Warning>,
    pub diagnostics: Diagnostics,
}

/// Intermediate fit shared by the public pipeline and the bootstrap.
#[derive(Clone, Debug)]
pub(crate) struct PointFit {
    pub point: f64,
    pub alpha: f64,
    pub share: f64,
    pub share_t_stat: f64,
    pub denominator: f64,
    pub h_mean: f64,
    pub h_sd: f64,
    pub dropped_controls: Vec<usize>,
}

pub(crate) fn fit_point(
    data: &Dataset,
    family: &[InstrumentSet],
    kind: &EstimandKind,
    regularization: Regularization,
) -> Result<PointFit> {
    kind.validate(data.j())?;
    if family.is_empty() {
        return Err(Error::InvalidConfig("empty subset family".into()));
    }
    let gamma = build_gamma(&data.z, family);
    let lambda = lambda_for(kind, data, family)?;
    let res = partial_out_controls(&data.y, &data.d, &gamma, data.x.as_ref())?;

    let h = estimate_h(&res.gamma, &lambda)?;
    let n = data.n() as f64;
    let share = h.dot(&res.d) / n;
    let h_mean = h.mean();
    let h_sd = (h.iter().map(|v| (v - h_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let share_var = (0..data.n())
        .map(|i| (h[i] * res.d[i] - share).powi(2))
        .sum::<f64>()
        / (n - 1.0);
    let share_t_stat = if share_var > 0.0 {
        share.abs() / (share_var.sqrt() / n.sqrt())
    } else if share.abs() > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    rho::weak_gate(share, share_t_stat)?;

    let alpha = match regularization {
        Regularization::None => 0.0,
        Regularization::Fixed(a) => {
            if !(a.is_finite() && a >= 0.0) {
                return Err(Error::InvalidConfig(format!("ridge penalty {a} must be >= 0")));
            }
            a
        }
        Regularization::AutoMse => select_alpha_mse(&res.y, &res.d, &res.gamma, &lambda)?.alpha,
    };
    let fit = estimate_rho(&res.y, &res.d, &res.gamma, &lambda, alpha)?;
    Ok(PointFit {
        point: fit.point,
        alpha,
        share,
        share_t_stat,
        denominator: fit.denominator,
        h_mean,
        h_sd,
        dropped_controls: res.dropped,
    })
}

/// Run a closure over `0..count` in parallel, honoring the `VMIV_THREADS`
/// worker cap. Results are returned in index order regardless of schedule.
pub(crate) fn map_indexed<T, F>(count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = std::env::var("VMIV_THREADS").ok().and_then(|s| s.parse::<usize>().ok());
    match threads {
        Some(t) if t >= 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map(|pool| pool.install(|| (0..count).into_par_iter().map(&f).collect()))
            .unwrap_or_else(|_| (0..count).map(&f).collect()),
        _ => (0..count).into_par_iter().map(&f).collect(),
    }
}

impl Dataset {
    pub(crate) fn resample(&self, idx: &[usize]) -> Dataset {
        let n = idx.len();
        let y = DVector::from_fn(n, |i, _| self.y[idx[i]]);
        let d = DVector::from_fn(n, |i, _| self.d[idx[i]]);
        let z = DMatrix::from_fn(n, self.z.ncols(), |i, c| self.z[(idx[i], c)]);
        let x = self
            .x
            .as_ref()
            .map(|x| DMatrix::from_fn(n, x.ncols(), |i, c| x[(idx[i], c)]));
        Dataset { y, d, z, x }
    }
}

/// Nonparametric row-resampling bootstrap of the full pipeline, including
/// re-estimation of the weight vector and re-selection of the penalty.
/// Deterministic given the seed and independent of the worker schedule:
/// draw `b` uses its own counter-based stream.
pub fn bootstrap_se(
    data: &Dataset,
    family: &[InstrumentSet],
    kind: &EstimandKind,
    regularization: Regularization,
    replications: usize,
    seed: u64,
) -> Result<BootstrapSummary> {
    if replications < 100 {
        return Err(Error::InvalidConfig(format!(
            "bootstrap needs at least 100 replications, got {replications}"
        )));
    }
    let n = data.n();
    let draws = map_indexed(replications, |b| {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(b as u64 + 1);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let resampled = data.resample(&idx);
        fit_point(&resampled, family, kind, regularization).map(|f| f.point).ok()
    });
    let excluded = draws.iter().filter(|p| p.is_none()).count();
    let points: Vec<f64> = draws.into_iter().flatten().collect();
    variance::summarize_bootstrap(points, excluded)
}

/// Estimate one target on a dataset: weight vector, optional partialling,
/// penalty selection, the ratio, and the requested inference.
pub fn estimate(
    spec: &EstimandSpec,
    data: &Dataset,
    design: &InstrumentDesign,
) -> Result<EstimateResult> {
    if design.j != data.j() {
        return Err(Error::InvalidConfig(format!(
            "design has {} instruments, data has {}",
            design.j,
            data.j()
        )));
    }
    let fit = fit_point(data, &design.family, &spec.kind, spec.regularization)?;
    let mut warnings = Vec::new();
    if !fit.dropped_controls.is_empty() {
        warnings.push(Warning {
            code: "CONTROLS_DROPPED".into(),
            detail: format!("collinear control columns dropped: {:?}", fit.dropped_controls),
        });
    }
    if fit.h_mean.abs() > 1e-10 * fit.h_sd.max(f64::MIN_POSITIVE) {
        warnings.push(Warning {
            code: "H_MEAN_NONZERO".into(),
            detail: format!("constructed instrument mean {:.3e}", fit.h_mean),
        });
    }

    let mut bootstrap_excluded = None;
    let (std_error, ci95) = match spec.variance {
        VarianceMethod::None => (None, None),
        VarianceMethod::Sandwich if data.x.is_none() => {
            let gamma = build_gamma(&data.z, &design.family);
            let lambda = lambda_for(&spec.kind, data, &design.family)?;
            let weights = weight_observations(&spec.kind, data, &design.family)?;
            let se = sandwich_se(&data.y, &data.d, &gamma, weights.as_ref(), &lambda, fit.point)?;
            (Some(se), Some([fit.point - 1.96 * se, fit.point + 1.96 * se]))
        }
        VarianceMethod::Sandwich => {
            // The plug-in variance does not cover partialled-out controls;
            // fall back to a deterministic bootstrap.
            const FALLBACK_B: usize = 500;
            const FALLBACK_SEED: u64 = 0x5eed;
            warnings.push(Warning {
                code: "SANDWICH_WITH_CONTROLS".into(),
                detail: format!("using a {FALLBACK_B}-draw bootstrap (seed {FALLBACK_SEED}) instead"),
            });
            let boot = bootstrap_se(
                data,
                &design.family,
                &spec.kind,
                spec.regularization,
                FALLBACK_B,
                FALLBACK_SEED,
            )?;
            bootstrap_excluded = Some(boot.excluded);
            (Some(boot.std_error), Some([boot.ci95.0, boot.ci95.1]))
        }
        VarianceMethod::Bootstrap { replications, seed } => {
            let boot =
                bootstrap_se(data, &design.family, &spec.kind, spec.regularization, replications, seed)?;
            bootstrap_excluded = Some(boot.excluded);
            (Some(boot.std_error), Some([boot.ci95.0, boot.ci95.1]))
        }
    };

    Ok(EstimateResult {
        estimand: spec.kind.label(data.j()),
        point: fit.point,
        std_error,
        ci95,
        complier_share: fit.share,
        alpha: fit.alpha,
        n: data.n(),
        warnings,
        diagnostics: Diagnostics {
            denominator: fit.denominator,
            share_t_stat: fit.share_t_stat,
            h_mean: fit.h_mean,
            h_sd: fit.h_sd,
            dropped_controls: fit.dropped_controls,
            bootstrap_excluded,
        },
    })
}
