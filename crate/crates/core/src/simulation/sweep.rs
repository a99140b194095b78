use std::fmt;
use std::str::FromStr;

use super::{run_monte_carlo, DesignRule, MonteCarloSummary, SimEstimator, SimulationConfig};
use crate::error::{FusionError, Result};
use crate::estimators::EstimatorConfig;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    PiO,
    Gamma,
    Theta,
    RhoZuO,
    Q,
}

impl SweepParam {
    /// Copy of `cfg` with this parameter set to `v`.
    pub fn apply<T: Scalar>(self, cfg: &SimulationConfig<T>, v: T) -> SimulationConfig<T> {
        let mut c = *cfg;
        match self {
            SweepParam::PiO => c.pi_e = T::one() - v,
            SweepParam::Gamma => c.gamma = v,
            SweepParam::Theta => c.theta = v,
            SweepParam::RhoZuO => c.rho_zu_o = v,
            SweepParam::Q => c.design = DesignRule::QuantileTails(v),
        }
        c
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepParam::PiO => "pi_O",
            SweepParam::Gamma => "gamma",
            SweepParam::Theta => "theta",
            SweepParam::RhoZuO => "rho_zu_O",
            SweepParam::Q => "Q",
        })
    }
}

impl FromStr for SweepParam {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "pi_O" | "pi_o" => SweepParam::PiO,
            "gamma" => SweepParam::Gamma,
            "theta" => SweepParam::Theta,
            "rho_zu_O" | "rho_zu_o" => SweepParam::RhoZuO,
            "Q" | "q" => SweepParam::Q,
            other => {
                return Err(FusionError::InvalidConfig(format!(
                    "cannot sweep `{other}`; expected pi_O, gamma, theta, rho_zu_O or Q"
                )))
            }
        })
    }
}

/// One Monte Carlo summary per sweep value, in the order given.
pub fn misspecification_sweep<T: Scalar>(
    cfg: &SimulationConfig<T>,
    param: SweepParam,
    values: &[T],
    estimators: &[SimEstimator<T>],
    replications: usize,
    est_cfg: &EstimatorConfig<T>,
) -> Result<Vec<MonteCarloSummary<T>>> {
    values
        .iter()
        .map(|&v| run_monte_carlo(&param.apply(cfg, v), estimators, replications, est_cfg))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apply_and_names() {
        let c = SimulationConfig::<f64>::default();
        assert!((SweepParam::PiO.apply(&c, 0.8).pi_e - 0.2).abs() < 1e-15);
        assert_eq!(SweepParam::Q.apply(&c, 0.1).design, DesignRule::QuantileTails(0.1));
        assert_eq!(SweepParam::RhoZuO.apply(&c, 0.1).rho_zu_e, 0.4);
        for p in [SweepParam::PiO, SweepParam::Gamma, SweepParam::Theta, SweepParam::RhoZuO, SweepParam::Q] {
            assert_eq!(p.to_string().parse::<SweepParam>().unwrap(), p);
        }
        assert!("beta1".parse::<SweepParam>().is_err());
    }

    #[test]
    fn gamma_sweep_keeps_equal_x_variance() {
        let c = SweepParam::Gamma.apply(&SimulationConfig::<f64>::default(), 0.5);
        assert!((c.sigma_v2_value() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn one_summary_per_value() {
        let c = SimulationConfig::<f64>::default();
        let out = misspecification_sweep(
            &c,
            SweepParam::Theta,
            &[0.0, 1.0],
            &SimEstimator::table_set(),
            10,
            &EstimatorConfig::default(),
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        assert_ne!(out[0], out[1]);
    }
}
