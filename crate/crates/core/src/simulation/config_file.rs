//! Flat `key = value` simulation configs with `#` comments.

use std::collections::BTreeSet;

use super::{DesignRule, SigmaV2, SimEstimator, SimulationConfig};
use crate::error::{FusionError, Result};
use crate::scalar::Scalar;

/// A parsed config file: the DGP plus what to run on it.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationFile<T> {
    pub config: SimulationConfig<T>,
    pub replications: usize,
    pub estimators: Vec<SimEstimator<T>>,
}

impl<T: Scalar> Default for SimulationFile<T> {
    fn default() -> Self {
        Self {
            config: SimulationConfig::default(),
            replications: 10_000,
            estimators: SimEstimator::table_set(),
        }
    }
}

fn num<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
    v.parse()
        .map_err(|_| FusionError::InvalidConfig(format!("`{key}`: cannot parse `{v}`")))
}

fn design<T: Scalar>(v: &str) -> Result<DesignRule<T>> {
    if v == "random" {
        return Ok(DesignRule::RandomSplit);
    }
    match v.strip_prefix("quantile:") {
        Some(q) => Ok(DesignRule::QuantileTails(num("design", q)?)),
        None => Err(FusionError::InvalidConfig(format!(
            "`design`: expected `random` or `quantile:<Q>`, got `{v}`"
        ))),
    }
}

/// Parses a config, starting from the defaults. Unknown or repeated keys
/// are errors.
pub fn parse_config<T: Scalar>(text: &str) -> Result<SimulationFile<T>> {
    let mut out = SimulationFile::default();
    let c = &mut out.config;
    let mut seen = BTreeSet::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            FusionError::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let (key, v) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(FusionError::InvalidConfig(format!("line {}: `{key}` repeated", lineno + 1)));
        }
        match key {
            "beta1" => c.beta1 = num(key, v)?,
            "beta2" => c.beta2 = num(key, v)?,
            "gamma" => c.gamma = num(key, v)?,
            "sigma_v2" => {
                c.sigma_v2 = match v {
                    "equal_x_variance" => SigmaV2::EqualXVariance,
                    _ => SigmaV2::Fixed(num(key, v)?),
                }
            }
            "rho_zu" => {
                c.rho_zu_e = num(key, v)?;
                c.rho_zu_o = c.rho_zu_e;
            }
            "rho_zu_e" => c.rho_zu_e = num(key, v)?,
            "rho_zu_o" => c.rho_zu_o = num(key, v)?,
            "rho_uv_scaled" => c.rho_uv_scaled = num(key, v)?,
            "theta" => c.theta = num(key, v)?,
            "pi_e" => c.pi_e = num(key, v)?,
            "pi_o" => c.pi_e = T::one() - num::<T>(key, v)?,
            "n_e" => c.n_e = num(key, v)?,
            "design" => c.design = design(v)?,
            "seed" => c.seed = num(key, v)?,
            "replications" => out.replications = num(key, v)?,
            "estimators" => {
                out.estimators = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(str::parse)
                    .collect::<Result<_>>()?
            }
            other => return Err(FusionError::InvalidConfig(format!("unknown key `{other}`"))),
        }
    }
    if seen.contains("pi_e") && seen.contains("pi_o") {
        return Err(FusionError::InvalidConfig("set only one of `pi_e` and `pi_o`".into()));
    }
    if seen.contains("rho_zu") && (seen.contains("rho_zu_e") || seen.contains("rho_zu_o")) {
        return Err(FusionError::InvalidConfig("`rho_zu` conflicts with `rho_zu_e`/`rho_zu_o`".into()));
    }
    out.config.validate()?;
    Ok(out)
}

impl<T: Scalar> SimulationFile<T> {
    /// Canonical text form; [`parse_config`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let sigma = match c.sigma_v2 {
            SigmaV2::EqualXVariance => "equal_x_variance".to_string(),
            SigmaV2::Fixed(v) => v.to_string(),
        };
        let names: Vec<String> = self.estimators.iter().map(|e| e.to_string()).collect();
        [
            format!("beta1 = {}", c.beta1),
            format!("beta2 = {}", c.beta2),
            format!("gamma = {}", c.gamma),
            format!("sigma_v2 = {sigma}"),
            format!("rho_zu_e = {}", c.rho_zu_e),
            format!("rho_zu_o = {}", c.rho_zu_o),
            format!("rho_uv_scaled = {}", c.rho_uv_scaled),
            format!("theta = {}", c.theta),
            format!("pi_e = {}", c.pi_e),
            format!("n_e = {}", c.n_e),
            format!("design = {}", c.design),
            format!("seed = {}", c.seed),
            format!("replications = {}", self.replications),
            format!("estimators = {}", names.join(",")),
        ]
        .join("\n")
            + "\n"
    }

    /// `(key, value)` pairs of [`Self::to_text`], for run manifests.
    pub fn pairs(&self) -> Vec<(String, String)> {
        self.to_text()
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }
}
