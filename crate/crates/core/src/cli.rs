//! Command-line front end. Every output carries a run manifest: `# key: value`
//! comment lines ahead of CSV, or a `manifest` object inside JSON.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 estimation
//! failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::data::{read_csv, split, write_csv, EstimateReport, FusedDataset};
use crate::efficiency::design_table;
use crate::error::{FusionError, Result};
use crate::estimators::{Estimator, EstimatorConfig, Lambda, ObsContext};
use crate::probit::{probit_combined, probit_experiment_only, PenaltyMode};
use crate::robustness::{default_lambda_grid, default_weight_grid, tune_lambda_blocks, tune_weight_blocks};
use crate::simulation::{
    draw_sample, misspecification_sweep, parse_config, run_monte_carlo, MonteCarloSummary, SimEstimator,
    SimulationFile, SweepParam,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ESTIMATION: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "expfuse", version, about = "Fuse experimental and observational samples to estimate a causal slope")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Fit one estimator to a `y,x,z,g` CSV and print a JSON report.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo harness and print a summary CSV.
    Simulate(SimulateArgs),
    /// Print predicted efficiency ratios for random and quantile-tail designs.
    Design(DesignArgs),
    /// Leave-one-out tuning of the weight or penalty on a `y,x,z,g` CSV.
    Tune(TuneArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Linear,
    Probit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Penalty {
    Hard,
    Quadratic,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    pub data: PathBuf,
    /// experiment-only, ols-obs, iv-obs, bias-corrected, weighted, regularized,
    /// gmm, gmm-two-step, cv-weighted, cv-regularized; with `--model probit`:
    /// experiment-only or combined.
    #[arg(long, default_value = "gmm")]
    pub method: String,
    /// Penalty for `regularized`; a number >= 0 or `inf`.
    #[arg(long)]
    pub lambda: Option<String>,
    /// Fixed observational weight in [0, 1] for `weighted`.
    #[arg(long)]
    pub weight: Option<f64>,
    #[arg(long, value_enum, default_value = "linear")]
    pub model: Model,
    /// How the probit combination imposes the observational constraints.
    #[arg(long, value_enum, default_value = "hard")]
    pub penalty: Penalty,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Flat `key = value` config; defaults are used when omitted.
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `name=v1,v2,...` with name one of pi_O, gamma, theta, rho_zu_O, Q.
    #[arg(long)]
    pub sweep: Option<String>,
    /// Also write replication 0 as a `y,x,z,g` CSV to this path.
    #[arg(long)]
    pub emit_samples: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DesignArgs {
    #[arg(long, default_value_t = 0.05)]
    pub pi_e: f64,
    #[arg(long, default_value_t = 0.95)]
    pub gamma: f64,
    /// Defaults to `1 - gamma^2`.
    #[arg(long)]
    pub sigma_v2: Option<f64>,
    #[arg(long, default_value_t = 0.84)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 100)]
    pub n_e: usize,
    /// Tail quantiles; pass an empty string for none.
    #[arg(long, default_value = "0.025,0.05,0.1,0.2,0.3,0.5")]
    pub q: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TuneParam {
    Weight,
    Lambda,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "weight")]
    pub param: TuneParam,
    /// Comma-separated grid; the default grid otherwise.
    #[arg(long)]
    pub grid: Option<String>,
}

/// Provenance attached to every output.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub version: String,
    pub input_sha256: Option<String>,
}

impl RunManifest {
    fn new(subcommand: &str) -> Self {
        Self {
            subcommand: subcommand.into(),
            config: BTreeMap::new(),
            seed: 0,
            version: env!("CARGO_PKG_VERSION").into(),
            input_sha256: None,
        }
    }

    fn set(&mut self, k: &str, v: impl ToString) {
        self.config.insert(k.into(), v.to_string());
    }

    pub fn comment_block(&self) -> String {
        let mut out = format!(
            "# subcommand: {}\n# version: {}\n# seed: {}\n",
            self.subcommand, self.version, self.seed
        );
        if let Some(d) = &self.input_sha256 {
            out.push_str(&format!("# input_sha256: {d}\n"));
        }
        for (k, v) in &self.config {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        out
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| FusionError::Io(format!("{}: {e}", path.display())))
}

fn io_err(e: std::io::Error) -> FusionError {
    FusionError::Io(e.to_string())
}

/// Parses and runs one command line; returns the exit code.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                let _ = write!(err, "{e}");
                EXIT_VALIDATION
            } else {
                let _ = write!(out, "{e}");
                EXIT_OK
            };
            return code;
        }
    };
    match execute(&cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {e}", e.kind());
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_ESTIMATION
            }
        }
    }
}

pub fn execute(cmd: &Command, out: &mut dyn Write) -> Result<()> {
    let text = match cmd {
        Command::Estimate(a) => cmd_estimate(a)?,
        Command::Simulate(a) => cmd_simulate(a)?,
        Command::Design(a) => cmd_design(a)?,
        Command::Tune(a) => cmd_tune(a)?,
    };
    out.write_all(text.as_bytes()).map_err(io_err)?;
    out.flush().map_err(io_err)
}

fn load(path: &Path, m: &mut RunManifest) -> Result<FusedDataset<f64>> {
    let bytes = read_input(path)?;
    m.input_sha256 = Some(sha256_hex(&bytes));
    read_csv(bytes.as_slice())
}

/// Linear estimator named by `--method`, with `--lambda`/`--weight` applied.
fn linear_estimator(a: &EstimateArgs) -> Result<SimEstimator<f64>> {
    let mut est: SimEstimator<f64> = a.method.parse()?;
    if let Some(l) = &a.lambda {
        match est {
            SimEstimator::Plain(Estimator::Regularized(_)) => {
                est = SimEstimator::Plain(Estimator::Regularized(l.parse::<Lambda<f64>>()?))
            }
            _ => {
                return Err(FusionError::InvalidHyperparameter(format!(
                    "--lambda does not apply to `{}`",
                    a.method
                )))
            }
        }
    }
    if let Some(w) = a.weight {
        match est {
            SimEstimator::Plain(Estimator::Weighted | Estimator::FixedWeight(_)) => {
                est = SimEstimator::Plain(Estimator::FixedWeight(w))
            }
            _ => {
                return Err(FusionError::InvalidHyperparameter(format!(
                    "--weight does not apply to `{}`",
                    a.method
                )))
            }
        }
    }
    Ok(est)
}

#[derive(Serialize)]
struct EstimateOutput<'a> {
    #[serde(flatten)]
    report: &'a EstimateReport<f64>,
    manifest: &'a RunManifest,
}

pub fn cmd_estimate(a: &EstimateArgs) -> Result<String> {
    let mut m = RunManifest::new("estimate");
    m.set("method", &a.method);
    m.set("model", format!("{:?}", a.model).to_lowercase());
    if let Some(l) = &a.lambda {
        m.set("lambda", l);
    }
    if let Some(w) = a.weight {
        m.set("weight", w);
    }
    let ds = load(&a.data, &mut m)?;
    let report = match a.model {
        Model::Linear => {
            let est = linear_estimator(a)?;
            let cfg = EstimatorConfig::default();
            let (exp, obs) = split(&ds);
            let ctx = ObsContext::new(&obs, &cfg);
            est.fit(&exp, &ctx, &cfg)?
        }
        Model::Probit => {
            m.set("penalty", format!("{:?}", a.penalty).to_lowercase());
            if a.lambda.is_some() || a.weight.is_some() {
                return Err(FusionError::InvalidHyperparameter(
                    "--lambda and --weight apply to the linear model only".into(),
                ));
            }
            match a.method.as_str() {
                "experiment-only" => probit_experiment_only(&split(&ds).0)?,
                "combined" => probit_combined(
                    &ds,
                    match a.penalty {
                        Penalty::Hard => PenaltyMode::Hard,
                        Penalty::Quadratic => PenaltyMode::Quadratic,
                    },
                )?,
                other => {
                    return Err(FusionError::InvalidConfig(format!(
                        "unknown probit method `{other}`; expected experiment-only or combined"
                    )))
                }
            }
        }
    };
    let mut s = serde_json::to_string_pretty(&EstimateOutput {
        report: &report,
        manifest: &m,
    })
    .map_err(|e| FusionError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn parse_list<V: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<V>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| FusionError::InvalidConfig(format!("{what}: cannot parse `{t}`")))
        })
        .collect()
}

fn parse_sweep(s: &str) -> Result<(SweepParam, Vec<f64>)> {
    let (name, values) = s
        .split_once('=')
        .ok_or_else(|| FusionError::InvalidConfig(format!("--sweep expects name=v1,v2,..., got `{s}`")))?;
    let values: Vec<f64> = parse_list("--sweep", values)?;
    if values.is_empty() {
        return Err(FusionError::InvalidConfig("--sweep needs at least one value".into()));
    }
    Ok((name.parse()?, values))
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<String> {
    let mut m = RunManifest::new("simulate");
    let mut file: SimulationFile<f64> = match &a.config {
        Some(p) => {
            let bytes = read_input(p)?;
            m.input_sha256 = Some(sha256_hex(&bytes));
            let text = String::from_utf8(bytes).map_err(|_| FusionError::InvalidConfig("config is not UTF-8".into()))?;
            parse_config(&text)?
        }
        None => SimulationFile::default(),
    };
    if let Some(r) = a.reps {
        file.replications = r;
    }
    if let Some(s) = a.seed {
        file.config.seed = s;
    }
    file.config.validate()?;
    m.seed = file.config.seed;
    for (k, v) in file.pairs().into_iter().filter(|(k, _)| k != "seed") {
        m.config.insert(k, v);
    }
    let sweep = a.sweep.as_deref().map(parse_sweep).transpose()?;
    if let Some(s) = &a.sweep {
        m.set("sweep", s);
    }
    if let Some(path) = &a.emit_samples {
        let ds = draw_sample(&file.config, 0)?;
        let mut buf = m.comment_block().into_bytes();
        write_csv(&ds, &mut buf).map_err(io_err)?;
        fs::write(path, buf).map_err(|e| FusionError::Io(format!("{}: {e}", path.display())))?;
    }
    let est_cfg = EstimatorConfig::default();
    let mut out = m.comment_block();
    match sweep {
        None => {
            let s = run_monte_carlo(&file.config, &file.estimators, file.replications, &est_cfg)?;
            out.push_str(&s.to_csv());
        }
        Some((param, values)) => {
            let sums = misspecification_sweep(
                &file.config,
                param,
                &values,
                &file.estimators,
                file.replications,
                &est_cfg,
            )?;
            out.push_str(&format!("{param},{}\n", MonteCarloSummary::<f64>::CSV_HEADER));
            for (v, s) in values.iter().zip(&sums) {
                out.push_str(&s.csv_rows(&format!("{v},")));
            }
        }
    }
    Ok(out)
}

pub fn cmd_design(a: &DesignArgs) -> Result<String> {
    let mut m = RunManifest::new("design");
    let sigma_v2 = a.sigma_v2.unwrap_or(1.0 - a.gamma * a.gamma);
    let qs: Vec<f64> = parse_list("--q", &a.q)?;
    m.set("pi_e", a.pi_e);
    m.set("gamma", a.gamma);
    m.set("sigma_v2", sigma_v2);
    m.set("sigma2", a.sigma2);
    m.set("n_e", a.n_e);
    m.set("q", &a.q);
    let rows = design_table(a.pi_e, a.gamma, sigma_v2, a.sigma2, a.n_e, &qs)?;
    let mut out = m.comment_block();
    out.push_str("design,ratio,relative_mse\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.design, r.ratio, r.relative_mse));
    }
    Ok(out)
}

pub fn cmd_tune(a: &TuneArgs) -> Result<String> {
    let mut m = RunManifest::new("tune");
    m.set("param", format!("{:?}", a.param).to_lowercase());
    if let Some(g) = &a.grid {
        m.set("grid", g);
    }
    let ds = load(&a.data, &mut m)?;
    let cfg = EstimatorConfig::default();
    let (exp, obs) = split(&ds);
    let ctx = ObsContext::new(&obs, &cfg);
    let body = match a.param {
        TuneParam::Weight => {
            let grid = match &a.grid {
                Some(g) => parse_list("--grid", g)?,
                None => default_weight_grid(),
            };
            tune_weight_blocks(&exp, &ctx, &grid, &cfg)?.to_csv()
        }
        TuneParam::Lambda => {
            let grid = match &a.grid {
                Some(g) => g
                    .split(',')
                    .filter(|t| !t.trim().is_empty())
                    .map(str::parse::<Lambda<f64>>)
                    .collect::<Result<Vec<_>>>()?,
                None => default_lambda_grid(),
            };
            tune_lambda_blocks(&exp, &ctx, &grid, &cfg)?.to_csv()
        }
    };
    Ok(m.comment_block() + &body)
}
