//! Synthetic data generation with known compliance-group structure, exact
//! oracle values of any built-in estimand by direct enumeration, and a
//! Monte Carlo harness comparing the ratio estimator against its
//! unregularized two-cell form and fully saturated two-stage least squares.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::combinatorics::{canonical_subsets, enumerate_compliance_groups, DEDEKIND};
use crate::design::{build_gamma, Dataset};
use crate::error::{Error, Result};
use crate::estimation::lambda::group_weight;
use crate::estimation::{
    estimate_rho, map_indexed, sandwich_se, select_alpha_mse, weight_observations, EstimandKind,
};
use crate::sets::{ComplianceGroup, InstrumentSet};

/// Joint law of the instrument vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InstrumentLaw {
    /// Independent coins with per-instrument success probabilities.
    IndependentBernoulli { p: Vec<f64> },
    /// Independent coins, then one instrument is redrawn with a different
    /// success probability whenever a conditioning instrument is on.
    ConditionalBernoulli { p: Vec<f64>, condition_on: usize, target: usize, p_when_on: f64 },
    /// Two instruments thresholded at the medians of a correlated standard
    /// bivariate normal.
    LatentGaussianPair { correlation: f64 },
}

impl InstrumentLaw {
    fn j(&self) -> usize {
        match self {
            InstrumentLaw::IndependentBernoulli { p } => p.len(),
            InstrumentLaw::ConditionalBernoulli { p, .. } => p.len(),
            InstrumentLaw::LatentGaussianPair { .. } => 2,
        }
    }

    /// Exact cell probabilities over assignments in bitmask order.
    pub fn cell_probabilities(&self) -> Result<Vec<f64>> {
        match self {
            InstrumentLaw::IndependentBernoulli { p } => {
                let j = p.len();
                Ok((0..(1usize << j))
                    .map(|m| {
                        (0..j)
                            .map(|b| if m & (1 << b) != 0 { p[b] } else { 1.0 - p[b] })
                            .product()
                    })
                    .collect())
            }
            InstrumentLaw::ConditionalBernoulli { p, condition_on, target, p_when_on } => {
                let j = p.len();
                if *condition_on < 1 || *condition_on > j || *target < 1 || *target > j {
                    return Err(Error::InvalidConfig("conditional law indices out of range".into()));
                }
                if condition_on == target {
                    return Err(Error::InvalidConfig(
                        "conditional law cannot condition the target on itself".into(),
                    ));
                }
                let (cb, tb) = (*condition_on - 1, *target - 1);
                Ok((0..(1usize << j))
                    .map(|m| {
                        (0..j)
                            .map(|b| {
                                let on = m & (1 << b) != 0;
                                let prob_on = if b == tb && m & (1 << cb) != 0 {
                                    *p_when_on
                                } else {
                                    p[b]
                                };
                                if on {
                                    prob_on
                                } else {
                                    1.0 - prob_on
                                }
                            })
                            .product()
                    })
                    .collect())
            }
            InstrumentLaw::LatentGaussianPair { correlation } => {
                if !(-1.0..1.0).contains(correlation) {
                    return Err(Error::InvalidConfig(format!(
                        "latent correlation {correlation} outside (-1, 1)"
                    )));
                }
                // Median cuts: orthant probabilities from the arcsine law.
                let p11 = 0.25 + correlation.asin() / (2.0 * std::f64::consts::PI);
                let p10 = 0.5 - p11;
                Ok(vec![p11, p10, p10, p11])
            }
        }
    }

    fn sample_row(&self, rng: &mut impl Rng) -> u16 {
        match self {
            InstrumentLaw::IndependentBernoulli { p } => {
                let mut m = 0u16;
                for (b, &pb) in p.iter().enumerate() {
                    if rng.random::<f64>() < pb {
                        m |= 1 << b;
                    }
                }
                m
            }
            InstrumentLaw::ConditionalBernoulli { p, condition_on, target, p_when_on } => {
                let mut m = 0u16;
                for (b, &pb) in p.iter().enumerate() {
                    if rng.random::<f64>() < pb {
                        m |= 1 << b;
                    }
                }
                let (cb, tb) = (*condition_on - 1, *target - 1);
                if m & (1 << cb) != 0 {
                    if rng.random::<f64>() < *p_when_on {
                        m |= 1 << tb;
                    } else {
                        m &= !(1 << tb);
                    }
                }
                m
            }
            InstrumentLaw::LatentGaussianPair { correlation } => {
                let u: f64 = rng.sample(rand_distr::StandardNormal);
                let v: f64 = rng.sample(rand_distr::StandardNormal);
                let x1 = u;
                let x2 = correlation * u + (1.0 - correlation * correlation).sqrt() * v;
                u16::from(x1 > 0.0) | (u16::from(x2 > 0.0) << 1)
            }
        }
    }
}

/// Baseline potential outcome `Y(0)`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineLaw {
    Zero,
    /// `U ~ Unif[0,1]`.
    Uniform,
    /// `label * U` with `U ~ Unif[0,1]`: outcome levels scale with the
    /// 1-based canonical group label, generating selection-relevant levels.
    UniformScaledByLabel,
}

/// Additive noise on the treatment effect.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectNoise {
    None,
    /// `V ~ Unif[0,1]`, mean 1/2.
    Uniform,
}

impl EffectNoise {
    fn mean(self) -> f64 {
        match self {
            EffectNoise::None => 0.0,
            EffectNoise::Uniform => 0.5,
        }
    }
}

/// Outcome process: `Y(1) = Y(0) + effects[g] + noise`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OutcomeLaw {
    pub baseline: BaselineLaw,
    /// Constant effect component per compliance group, canonical order.
    pub effects: Vec<f64>,
    pub noise: EffectNoise,
}

/// A complete data-generating process with known group structure.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DgpSpec {
    pub j: usize,
    /// Probability of each compliance group, canonical enumeration order.
    pub group_probs: Vec<f64>,
    pub instrument_law: InstrumentLaw,
    pub outcome: OutcomeLaw,
    pub n: usize,
    pub seed: u64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.j < 1 || self.j > 5 {
            return Err(Error::InstrumentCountOutOfRange(self.j, 1, 5));
        }
        let ded = DEDEKIND[self.j] as usize;
        if self.group_probs.len() != ded {
            return Err(Error::InvalidConfig(format!(
                "{} group probabilities given, {ded} compliance groups exist",
                self.group_probs.len()
            )));
        }
        let total: f64 = self.group_probs.iter().sum();
        if self.group_probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig("group probabilities must sum to one".into()));
        }
        if self.outcome.effects.len() != ded {
            return Err(Error::InvalidConfig(format!(
                "{} group effects given, {ded} compliance groups exist",
                self.outcome.effects.len()
            )));
        }
        if self.instrument_law.j() != self.j {
            return Err(Error::InvalidConfig("instrument law dimension differs from j".into()));
        }
        if self.n == 0 {
            return Err(Error::InvalidConfig("empty sample requested".into()));
        }
        self.instrument_law.cell_probabilities().map(|_| ())
    }

    /// Average effect within each group: the constant component plus the
    /// noise mean.
    pub fn group_effects(&self) -> Vec<f64> {
        self.outcome.effects.iter().map(|e| e + self.outcome.noise.mean()).collect()
    }
}

/// A generated sample with the true group label (canonical index) per row.
#[derive(Clone, Debug)]
pub struct SimulatedData {
    pub dataset: Dataset,
    pub group_labels: Vec<usize>,
}

/// Draw a sample from the process with an explicit RNG.
pub fn sample_dgp(dgp: &DgpSpec, rng: &mut impl Rng) -> Result<SimulatedData> {
    dgp.validate()?;
    let groups = enumerate_compliance_groups(dgp.j)?;
    let n = dgp.n;
    let mut cum = Vec::with_capacity(groups.len());
    let mut acc = 0.0;
    for p in &dgp.group_probs {
        acc += p;
        cum.push(acc);
    }
    let mut z = DMatrix::zeros(n, dgp.j);
    let mut d = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.random();
        let g = cum.partition_point(|c| *c < u).min(groups.len() - 1);
        labels.push(g);
        let mask = dgp.instrument_law.sample_row(rng);
        for b in 0..dgp.j {
            z[(i, b)] = f64::from(u8::from(mask & (1 << b) != 0));
        }
        let di = groups[g].selection_value(InstrumentSet::from_mask(mask));
        d[i] = f64::from(di);
        let label = (g + 1) as f64;
        let y0 = match dgp.outcome.baseline {
            BaselineLaw::Zero => 0.0,
            BaselineLaw::Uniform => rng.random::<f64>(),
            BaselineLaw::UniformScaledByLabel => label * rng.random::<f64>(),
        };
        let noise = match dgp.outcome.noise {
            EffectNoise::None => 0.0,
            EffectNoise::Uniform => rng.random::<f64>(),
        };
        let effect = dgp.outcome.effects[g] + noise;
        y[i] = y0 + f64::from(di) * effect;
    }
    Ok(SimulatedData { dataset: Dataset::new(y, d, z, None)?, group_labels: labels })
}

/// Draw the sample the spec itself describes (its own `n` and `seed`).
pub fn draw(dgp: &DgpSpec) -> Result<SimulatedData> {
    let mut rng = ChaCha12Rng::seed_from_u64(dgp.seed);
    sample_dgp(dgp, &mut rng)
}

/// Three-instrument benchmark process: twenty equally likely compliance
/// groups, group label `g` contributing a constant effect `g` plus uniform
/// noise, baseline `label * U`. Variant 1 draws fair independent coins;
/// variant 2 additionally makes the third instrument rare whenever the
/// second is on (`P(Z3=1 | Z2=1) = 0.05`).
pub fn dgp_three_instruments(variant: u8, n: usize, seed: u64) -> Result<DgpSpec> {
    let ded = DEDEKIND[3] as usize;
    let instrument_law = match variant {
        1 => InstrumentLaw::IndependentBernoulli { p: vec![0.5; 3] },
        2 => InstrumentLaw::ConditionalBernoulli {
            p: vec![0.5; 3],
            condition_on: 2,
            target: 3,
            p_when_on: 0.05,
        },
        v => return Err(Error::InvalidConfig(format!("unknown three-instrument variant {v}"))),
    };
    Ok(DgpSpec {
        j: 3,
        group_probs: vec![1.0 / ded as f64; ded],
        instrument_law,
        outcome: OutcomeLaw {
            baseline: BaselineLaw::UniformScaledByLabel,
            effects: (1..=ded).map(|g| g as f64).collect(),
            noise: EffectNoise::Uniform,
        },
        n,
        seed,
    })
}

/// Two-instrument benchmark process: 90% single-instrument compliers on the
/// first instrument (effect 2), 10% on the second (effect -8), instruments
/// thresholded at the medians of a latent normal pair with correlation -0.8.
/// The all-compliers average effect is exactly one.
pub fn dgp_two_instruments(n: usize, seed: u64) -> Result<DgpSpec> {
    let groups = enumerate_compliance_groups(2)?;
    let z1 = ComplianceGroup::Responder(crate::sets::SpernerFamily::new(vec![
        InstrumentSet::from_indices(&[1])?,
    ])?);
    let z2 = ComplianceGroup::Responder(crate::sets::SpernerFamily::new(vec![
        InstrumentSet::from_indices(&[2])?,
    ])?);
    let idx1 = groups.iter().position(|g| *g == z1).expect("single-instrument group");
    let idx2 = groups.iter().position(|g| *g == z2).expect("single-instrument group");
    let mut group_probs = vec![0.0; groups.len()];
    group_probs[idx1] = 0.9;
    group_probs[idx2] = 0.1;
    let mut effects = vec![0.0; groups.len()];
    effects[idx1] = 2.0;
    effects[idx2] = -8.0;
    Ok(DgpSpec {
        j: 2,
        group_probs,
        instrument_law: InstrumentLaw::LatentGaussianPair { correlation: -0.8 },
        outcome: OutcomeLaw { baseline: BaselineLaw::Uniform, effects, noise: EffectNoise::None },
        n,
        seed,
    })
}

/// Exact population quantities for an estimand under a process.
#[derive(Clone, Copy, Debug)]
pub struct OracleValues {
    /// The targeted complier average effect.
    pub value: f64,
    /// Population share of the conditioning complier group.
    pub complier_share: f64,
    /// Unconditional average treatment effect.
    pub ate: f64,
}

/// Exact oracle by direct enumeration over groups and instrument cells:
/// the target is the effect-weighted average with weights
/// `P(g) E[c(g,Z)] / sum_g P(g) E[c(g,Z)]`.
pub fn oracle_estimand(dgp: &DgpSpec, kind: &EstimandKind) -> Result<OracleValues> {
    dgp.validate()?;
    kind.validate(dgp.j)?;
    let groups = enumerate_compliance_groups(dgp.j)?;
    let cells = dgp.instrument_law.cell_probabilities()?;
    let effects = dgp.group_effects();
    let mut weighted = 0.0;
    let mut share = 0.0;
    let mut ate = 0.0;
    for (g, group) in groups.iter().enumerate() {
        let pg = dgp.group_probs[g];
        ate += pg * effects[g];
        let mut ec = 0.0;
        for (m, pz) in cells.iter().enumerate() {
            ec += pz * group_weight(kind, group, InstrumentSet::from_mask(m as u16))?;
        }
        weighted += pg * ec * effects[g];
        share += pg * ec;
    }
    if share <= 0.0 {
        return Err(Error::WeakIdentification { share, t_stat: 0.0 });
    }
    Ok(OracleValues { value: weighted / share, complier_share: share, ate })
}

/// Fully saturated two-stage least squares: project treatment on the full
/// product basis (equivalently on all cell indicators) and instrument the
/// outcome equation with the fitted values.
pub fn saturated_2sls(y: &DVector<f64>, d: &DVector<f64>, z: &DMatrix<f64>) -> Result<f64> {
    let family = canonical_subsets(z.ncols());
    let gamma = build_gamma(z, &family);
    let n = z.nrows();
    let mut ga = DMatrix::zeros(n, family.len() + 1);
    for i in 0..n {
        ga[(i, 0)] = 1.0;
    }
    for c in 0..family.len() {
        for i in 0..n {
            ga[(i, c + 1)] = gamma[(i, c)];
        }
    }
    let beta = crate::linalg::ols(&ga, d)?;
    let fitted = ga * beta;
    let denom = fitted.dot(d) - fitted.mean() * d.sum();
    if denom.abs() <= f64::EPSILON * n as f64 {
        return Err(Error::WeakIdentification { share: denom, t_stat: 0.0 });
    }
    let numer = fitted.dot(y) - fitted.mean() * y.sum();
    Ok(numer / denom)
}

/// Estimators compared by the Monte Carlo harness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// The ratio estimator with the MSE-selected ridge penalty.
    VmRegularized,
    /// The ratio estimator with no penalty (two-cell form for the
    /// all-compliers target).
    VmWald,
    /// Fully saturated two-stage least squares.
    SaturatedTsls,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::VmRegularized => "vm",
            Estimator::VmWald => "wald",
            Estimator::SaturatedTsls => "tsls",
        }
    }
}

/// Harness configuration.
#[derive(Clone, Debug)]
pub struct McConfig {
    pub estimand: EstimandKind,
    pub estimators: Vec<Estimator>,
    pub replications: usize,
    pub master_seed: u64,
    /// Also compute sandwich intervals and oracle coverage (ratio
    /// estimators only).
    pub coverage: bool,
}

/// Per-estimator aggregate over completed replicates.
#[derive(Clone, Debug, Serialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub mean: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: Option<f64>,
    pub mean_alpha: Option<f64>,
    pub share_mean: Option<f64>,
    pub share_sd: Option<f64>,
    pub completed: usize,
    pub failures: usize,
}

/// Monte Carlo comparison result.
#[derive(Clone, Debug, Serialize)]
pub struct McResult {
    pub oracle_value: f64,
    pub oracle_share: f64,
    pub oracle_ate: f64,
    pub replications: usize,
    pub summaries: Vec<EstimatorSummary>,
}

#[derive(Clone, Copy, Default)]
struct RepOutcome {
    point: Option<f64>,
    alpha: Option<f64>,
    covered: Option<bool>,
    /// Complier-share estimate; recorded for the unpenalized ratio, whose
    /// treatment moment equals it exactly.
    share: Option<f64>,
}

/// Run the harness: replicate draws use counter-based streams derived from
/// `(master_seed, replicate)`, so results are bit-identical for any worker
/// count. Per-replicate failures are counted, not fatal.
pub fn run_monte_carlo(dgp: &DgpSpec, config: &McConfig) -> Result<McResult> {
    dgp.validate()?;
    if config.replications == 0 {
        return Err(Error::InvalidConfig("at least one replication required".into()));
    }
    let oracle = oracle_estimand(dgp, &config.estimand)?;
    let family = canonical_subsets(dgp.j);
    let n_estimators = config.estimators.len();

    let outcomes: Vec<Vec<RepOutcome>> = map_indexed(config.replications, |rep| {
        let mut rng = ChaCha12Rng::seed_from_u64(config.master_seed);
        rng.set_stream(rep as u64 + 1);
        let mut row = vec![RepOutcome::default(); n_estimators];
        let Ok(sim) = sample_dgp(dgp, &mut rng) else {
            return row;
        };
        let data = &sim.dataset;
        let gamma = build_gamma(&data.z, &family);
        let lambda = crate::estimation::lambda_for(&config.estimand, data, &family).ok();
        for (e, estimator) in config.estimators.iter().enumerate() {
            row[e] = run_one(estimator, &config.estimand, data, &gamma, lambda.as_ref(), &family, oracle.value, config.coverage);
        }
        row
    });

    let mut summaries = Vec::with_capacity(n_estimators);
    for (e, estimator) in config.estimators.iter().enumerate() {
        let points: Vec<f64> = outcomes.iter().filter_map(|r| r[e].point).collect();
        let completed = points.len();
        let failures = config.replications - completed;
        let mean = points.iter().sum::<f64>() / completed.max(1) as f64;
        let rmse = (points.iter().map(|p| (p - oracle.value).powi(2)).sum::<f64>()
            / completed.max(1) as f64)
            .sqrt();
        let alphas: Vec<f64> = outcomes.iter().filter_map(|r| r[e].alpha).collect();
        let mean_alpha = if alphas.is_empty() {
            None
        } else {
            Some(alphas.iter().sum::<f64>() / alphas.len() as f64)
        };
        let covers: Vec<bool> = outcomes.iter().filter_map(|r| r[e].covered).collect();
        let coverage = if covers.is_empty() {
            None
        } else {
            Some(covers.iter().filter(|&&c| c).count() as f64 / covers.len() as f64)
        };
        let shares: Vec<f64> = outcomes.iter().filter_map(|r| r[e].share).collect();
        let (share_mean, share_sd) = if shares.len() >= 2 {
            let m = shares.iter().sum::<f64>() / shares.len() as f64;
            let v = shares.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (shares.len() - 1) as f64;
            (Some(m), Some(v.sqrt()))
        } else {
            (None, None)
        };
        summaries.push(EstimatorSummary {
            estimator: estimator.name().into(),
            mean,
            bias: mean - oracle.value,
            rmse,
            coverage,
            mean_alpha,
            share_mean,
            share_sd,
            completed,
            failures,
        });
    }
    Ok(McResult {
        oracle_value: oracle.value,
        oracle_share: oracle.complier_share,
        oracle_ate: oracle.ate,
        replications: config.replications,
        summaries,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    estimator: &Estimator,
    estimand: &EstimandKind,
    data: &Dataset,
    gamma: &DMatrix<f64>,
    lambda: Option<&DVector<f64>>,
    family: &[InstrumentSet],
    oracle: f64,
    coverage: bool,
) -> RepOutcome {
    let mut out = RepOutcome::default();
    match estimator {
        Estimator::SaturatedTsls => {
            out.point = saturated_2sls(&data.y, &data.d, &data.z).ok();
        }
        Estimator::VmWald | Estimator::VmRegularized => {
            let Some(lambda) = lambda else { return out };
            let alpha = match estimator {
                Estimator::VmRegularized => {
                    match select_alpha_mse(&data.y, &data.d, gamma, lambda) {
                        Ok(sel) => sel.alpha,
                        Err(_) => return out,
                    }
                }
                _ => 0.0,
            };
            let Ok(fit) = estimate_rho(&data.y, &data.d, gamma, lambda, alpha) else {
                return out;
            };
            out.point = Some(fit.point);
            if matches!(estimator, Estimator::VmRegularized) {
                out.alpha = Some(alpha);
            } else {
                out.share = Some(fit.denominator);
            }
            if coverage {
                let weights = weight_observations(estimand, data, family).ok().flatten();
                if let Ok(se) =
                    sandwich_se(&data.y, &data.d, gamma, weights.as_ref(), lambda, fit.point)
                {
                    out.covered = Some((fit.point - oracle).abs() <= 1.96 * se);
                }
            }
        }
    }
    out
}
