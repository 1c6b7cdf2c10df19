//! Command front door: configuration, the diagnose/estimate pipelines and
//! their machine-readable reports, and the simulation runner.

pub mod grammar;
mod ingest;

pub use ingest::{ingest_csv, ColumnRoles, DiscretizeRule, Ingested};

use std::path::PathBuf;

use serde::Serialize;

use crate::design::{
    auto_orient_instruments, fitted_propensity, support_report, vm_propensity_test, PropensityCell,
    SupportReport, VmTestRecord,
};
use crate::error::Result;
use crate::estimation::{estimate, EstimandSpec, EstimateResult, Warning};
use crate::simulation::{run_monte_carlo, DgpSpec, McConfig, McResult};

pub const REPORT_SCHEMA: &str = "vmiv-report/1";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A full estimation run request.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub data: PathBuf,
    pub roles: ColumnRoles,
    /// Estimand expressions in the textual grammar.
    pub estimands: Vec<String>,
    pub regularization: String,
    pub variance: String,
    pub seed: u64,
    pub auto_orient: bool,
}

/// Diagnostics payload shared by `diagnose` and `estimate`.
#[derive(Clone, Debug, Serialize)]
pub struct DiagnosticsReport {
    pub instrument_names: Vec<String>,
    pub support: SupportReport,
    pub propensity: Vec<PropensityCell>,
    pub vm_test: Vec<VmTestRecord>,
}

/// The machine-readable result of a run. Reproducible byte-for-byte given
/// the same config, data, and seed.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub schema: &'static str,
    pub version: &'static str,
    pub config: RunConfig,
    pub diagnostics: DiagnosticsReport,
    pub estimates: Vec<EstimateResult>,
    pub warnings: Vec<Warning>,
}

fn build_diagnostics(ing: &Ingested) -> Result<DiagnosticsReport> {
    Ok(DiagnosticsReport {
        instrument_names: ing.instrument_names.clone(),
        support: support_report(&ing.dataset, &ing.design),
        propensity: fitted_propensity(&ing.dataset)?,
        vm_test: vm_propensity_test(&ing.dataset)?,
    })
}

/// Ingest and report support, propensity, and monotonicity diagnostics.
pub fn diagnose(config: &RunConfig) -> Result<RunReport> {
    run_inner(config, false)
}

/// Ingest, diagnose, and estimate every requested estimand.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    run_inner(config, true)
}

fn run_inner(config: &RunConfig, with_estimates: bool) -> Result<RunReport> {
    let mut ing = ingest_csv(&config.data, &config.roles)?;
    let mut warnings = Vec::new();
    if config.auto_orient {
        let flipped = auto_orient_instruments(&mut ing.dataset);
        if !flipped.is_empty() {
            warnings.push(Warning {
                code: "AUTO_ORIENTED".into(),
                detail: format!("flipped instrument columns {flipped:?} to the encouraging direction"),
            });
        }
    }
    let diagnostics = build_diagnostics(&ing)?;
    let mut estimates = Vec::new();
    if with_estimates {
        let j = ing.dataset.j();
        let regularization = grammar::parse_regularization(&config.regularization)?;
        let variance = grammar::parse_variance(&config.variance, config.seed)?;
        for text in &config.estimands {
            let kind = grammar::parse_estimand(text, j)?;
            let spec = EstimandSpec { kind, regularization, variance };
            estimates.push(estimate(&spec, &ing.dataset, &ing.design)?);
        }
    }
    Ok(RunReport {
        schema: REPORT_SCHEMA,
        version: TOOL_VERSION,
        config: config.clone(),
        diagnostics,
        estimates,
        warnings,
    })
}

/// Simulation request: either a built-in process name or a spec file.
#[derive(Clone, Debug)]
pub struct SimulateConfig {
    pub dgp: String,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub estimators: Vec<crate::simulation::Estimator>,
    pub estimand: String,
    pub coverage: bool,
}

pub fn load_dgp(text: &str, n: usize, seed: u64) -> Result<DgpSpec> {
    match text {
        "three:1" => crate::simulation::dgp_three_instruments(1, n, seed),
        "three:2" => crate::simulation::dgp_three_instruments(2, n, seed),
        "two" => crate::simulation::dgp_two_instruments(n, seed),
        other => {
            if let Some(path) = other.strip_prefix("file:") {
                let content = std::fs::read_to_string(path)?;
                let mut spec: DgpSpec = serde_json::from_str(&content)?;
                spec.n = n;
                spec.seed = seed;
                spec.validate()?;
                Ok(spec)
            } else {
                Err(crate::error::Error::InvalidConfig(format!(
                    "unknown process `{other}` (expected three:1, three:2, two, or file:PATH)"
                )))
            }
        }
    }
}

/// Run the Monte Carlo harness from a textual config.
pub fn simulate(config: &SimulateConfig) -> Result<McResult> {
    let dgp = load_dgp(&config.dgp, config.n, config.seed)?;
    let estimand = grammar::parse_estimand(&config.estimand, dgp.j)?;
    run_monte_carlo(
        &dgp,
        &McConfig {
            estimand,
            estimators: config.estimators.clone(),
            replications: config.replications,
            master_seed: config.seed,
            coverage: config.coverage,
        },
    )
}

/// One row per (estimator, metric) plus the oracle rows.
pub fn mc_result_to_csv(result: &McResult) -> String {
    let mut out = String::from("estimator,metric,value\n");
    let mut push = |e: &str, m: &str, v: f64| {
        out.push_str(&format!("{e},{m},{v}\n"));
    };
    push("oracle", "value", result.oracle_value);
    push("oracle", "complier_share", result.oracle_share);
    push("oracle", "ate", result.oracle_ate);
    for s in &result.summaries {
        push(&s.estimator, "mean", s.mean);
        push(&s.estimator, "bias", s.bias);
        push(&s.estimator, "rmse", s.rmse);
        if let Some(c) = s.coverage {
            push(&s.estimator, "coverage", c);
        }
        if let Some(a) = s.mean_alpha {
            push(&s.estimator, "mean_alpha", a);
        }
        if let Some(m) = s.share_mean {
            push(&s.estimator, "share_mean", m);
        }
        push(&s.estimator, "completed", s.completed as f64);
        push(&s.estimator, "failures", s.failures as f64);
    }
    out
}

/// Flat CSV rows for estimate results.
pub fn estimates_to_csv(estimates: &[EstimateResult]) -> String {
    let mut out = String::from("estimand,point,std_error,ci_lo,ci_hi,complier_share,alpha,n\n");
    for e in estimates {
        let se = e.std_error.map_or(String::new(), |v| v.to_string());
        let (lo, hi) = e
            .ci95
            .map_or((String::new(), String::new()), |c| (c[0].to_string(), c[1].to_string()));
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.estimand, e.point, se, lo, hi, e.complier_share, e.alpha, e.n
        ));
    }
    out
}
