//! Command-line interface: estimate, diagnose, simulate, enumerate.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vmiv::cli::{self, ColumnRoles, RunConfig, SimulateConfig};
use vmiv::combinatorics::{count_compliance_groups, enumerate_compliance_groups};
use vmiv::error::Error;
use vmiv::simulation::Estimator;

#[derive(Parser)]
#[command(
    name = "vmiv",
    version,
    about = "Treatment-effect estimation from multiple instruments under vector monotonicity"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate one or more complier average effects from a CSV file.
    Estimate(EstimateArgs),
    /// Report support, rank, propensity, and monotonicity diagnostics.
    Diagnose(DiagnoseArgs),
    /// Run the Monte Carlo harness on a built-in or file-defined process.
    Simulate(SimulateArgs),
    /// List compliance groups (antichains of instrument subsets).
    Enumerate(EnumerateArgs),
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Outcome column name.
    #[arg(long)]
    outcome: String,
    /// Treatment column name (values exactly 0/1).
    #[arg(long)]
    treatment: String,
    /// Comma-separated instrument column names.
    #[arg(long, value_delimiter = ',')]
    instruments: Vec<String>,
    /// Comma-separated control column names.
    #[arg(long, value_delimiter = ',')]
    controls: Vec<String>,
    /// Threshold-expand an instrument: `col:cut1,cut2[:desc]`. Repeatable.
    #[arg(long = "discretize")]
    discretize: Vec<String>,
    /// Flip instruments whose marginal propensity difference is negative.
    #[arg(long)]
    auto_orient: bool,
}

impl DataArgs {
    fn roles(&self) -> Result<ColumnRoles, Error> {
        let discretize = self
            .discretize
            .iter()
            .map(|s| cli::grammar::parse_discretize(s))
            .collect::<Result<_, _>>()?;
        Ok(ColumnRoles {
            outcome: self.outcome.clone(),
            treatment: self.treatment.clone(),
            instruments: self.instruments.clone(),
            controls: self.controls.clone(),
            discretize,
        })
    }
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Estimand expression (`acl`, `slate:1,3`, `slatt:1`, `slatu:2`,
    /// `pte:1@z2=1`). Repeatable.
    #[arg(long = "estimand", required = true)]
    estimands: Vec<String>,
    /// `auto`, `none`, or `alpha=VALUE`.
    #[arg(long, default_value = "auto")]
    regularize: String,
    /// `sandwich`, `bootstrap:B`, or `none`.
    #[arg(long, default_value = "sandwich")]
    se: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output format: `json` or `csv`.
    #[arg(long, default_value = "json")]
    out: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out_file: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out_file: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// `three:1`, `three:2`, `two`, or `file:SPEC.json`.
    #[arg(long)]
    dgp: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Comma-separated estimators: vm, wald, tsls.
    #[arg(long, value_delimiter = ',', default_value = "vm,wald,tsls")]
    estimators: Vec<String>,
    /// Estimand expression evaluated against the oracle.
    #[arg(long, default_value = "acl")]
    estimand: String,
    /// Also compute sandwich intervals and report oracle coverage.
    #[arg(long)]
    coverage: bool,
    /// Output CSV path (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EnumerateArgs {
    /// Number of binary instruments.
    #[arg(long)]
    j: usize,
    /// Print only the count (supports one more instrument than listing).
    #[arg(long)]
    count_only: bool,
}

fn emit(text: &str, path: Option<&PathBuf>) -> Result<(), Error> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => println!("{}", text.trim_end_matches('\n')),
    }
    Ok(())
}

fn parse_estimators(names: &[String]) -> Result<Vec<Estimator>, Error> {
    names
        .iter()
        .map(|n| match n.as_str() {
            "vm" => Ok(Estimator::VmRegularized),
            "wald" => Ok(Estimator::VmWald),
            "tsls" => Ok(Estimator::SaturatedTsls),
            other => Err(Error::InvalidConfig(format!("unknown estimator `{other}`"))),
        })
        .collect()
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Enumerate(args) => {
            if args.count_only {
                println!("{}", count_compliance_groups(args.j)?);
            } else {
                for group in enumerate_compliance_groups(args.j)? {
                    println!("{group}");
                }
            }
            Ok(())
        }
        Command::Diagnose(args) => {
            let config = RunConfig {
                data: args.data.data.clone(),
                roles: args.data.roles()?,
                estimands: vec![],
                regularization: "none".into(),
                variance: "none".into(),
                seed: 0,
                auto_orient: args.data.auto_orient,
            };
            let report = cli::diagnose(&config)?;
            emit(&serde_json::to_string_pretty(&report)?, args.out_file.as_ref())
        }
        Command::Estimate(args) => {
            let config = RunConfig {
                data: args.data.data.clone(),
                roles: args.data.roles()?,
                estimands: args.estimands.clone(),
                regularization: args.regularize.clone(),
                variance: args.se.clone(),
                seed: args.seed,
                auto_orient: args.data.auto_orient,
            };
            let report = cli::run(&config)?;
            let text = match args.out.as_str() {
                "json" => serde_json::to_string_pretty(&report)?,
                "csv" => cli::estimates_to_csv(&report.estimates),
                other => {
                    return Err(Error::InvalidConfig(format!("unknown output format `{other}`")))
                }
            };
            emit(&text, args.out_file.as_ref())
        }
        Command::Simulate(args) => {
            let config = SimulateConfig {
                dgp: args.dgp.clone(),
                n: args.n,
                replications: args.reps,
                seed: args.seed,
                estimators: parse_estimators(&args.estimators)?,
                estimand: args.estimand.clone(),
                coverage: args.coverage,
            };
            let result = cli::simulate(&config)?;
            emit(&cli::mc_result_to_csv(&result), args.out.as_ref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::WeakIdentification { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
