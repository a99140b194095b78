//! Data-generating processes, assignment rules and the Monte Carlo harness.
//!
//! Units carry `(Z, U, V)` with `Z ~ N(0, 1)` and, given `Z` and the group,
//! `U = ρ_zu Z + e`, `Cov(U, V) = c σ_v`, `Cov(Z, V) = 0`. Observational
//! treatment is `X = γZ + V`; experimental treatment is an independent
//! standard normal. Outcomes follow `Y = β₁X + β₂Z + θXU + U`.

mod config_file;
mod monte_carlo;
mod sampler;
mod sweep;

pub use config_file::{parse_config, SimulationFile};
pub use monte_carlo::{
    run_monte_carlo, run_replications, summarize, EstimatorSummary, MonteCarloSummary, Replications, SimEstimator,
};
pub use sampler::draw_sample;
pub(crate) use sampler::replication_rng;
pub use sweep::{misspecification_sweep, SweepParam};

use std::fmt;

use crate::error::{FusionError, Result};
use crate::scalar::Scalar;

/// Variance of the observational first-stage residual `V`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SigmaV2<T> {
    /// `1 - γ²`, so that `Var(X|O) = Var(X|E) = 1`.
    EqualXVariance,
    Fixed(T),
}

/// How units are assigned to the experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DesignRule<T> {
    RandomSplit,
    /// Experimental units are drawn only from the top and bottom `Q`
    /// quantiles of `Z` in the pooled sample.
    QuantileTails(T),
}

impl<T: Scalar> fmt::Display for DesignRule<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignRule::RandomSplit => write!(f, "random"),
            DesignRule::QuantileTails(q) => write!(f, "quantile:{q}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulationConfig<T> {
    pub beta1: T,
    /// Direct effect of `Z` on `Y`.
    pub beta2: T,
    pub gamma: T,
    pub sigma_v2: SigmaV2<T>,
    pub rho_zu_e: T,
    pub rho_zu_o: T,
    /// `c` in `Cov(U, V) = c σ_v`.
    pub rho_uv_scaled: T,
    pub theta: T,
    pub pi_e: T,
    pub n_e: usize,
    pub design: DesignRule<T>,
    pub seed: u64,
}

impl<T: Scalar> Default for SimulationConfig<T> {
    fn default() -> Self {
        Self {
            beta1: T::lit(0.1),
            beta2: T::lit(0.1),
            gamma: T::lit(0.95),
            sigma_v2: SigmaV2::EqualXVariance,
            rho_zu_e: T::lit(0.4),
            rho_zu_o: T::lit(0.4),
            rho_uv_scaled: T::lit(0.4),
            theta: T::zero(),
            pi_e: T::lit(0.05),
            n_e: 100,
            design: DesignRule::RandomSplit,
            seed: 0,
        }
    }
}

/// Lower Cholesky factor of the conditional covariance of `(U, V)` given `Z`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ConditionalFactor {
    pub rho_zu: f64,
    pub l11: f64,
    pub l21: f64,
    pub l22: f64,
}

impl<T: Scalar> SimulationConfig<T> {
    pub fn sigma_v2_value(&self) -> T {
        match self.sigma_v2 {
            SigmaV2::EqualXVariance => T::one() - self.gamma * self.gamma,
            SigmaV2::Fixed(v) => v,
        }
    }

    pub fn pi_o(&self) -> T {
        T::one() - self.pi_e
    }

    /// `round(n_E π_O / π_E)`.
    pub fn n_o(&self) -> usize {
        let r = (self.n_e as f64) * self.pi_o().as_f64() / self.pi_e.as_f64();
        r.round() as usize
    }

    /// `b₂ = β₂ + Cov(U, Z)/Var(Z)` in the experimental group.
    pub fn b2_e(&self) -> T {
        self.beta2 + self.rho_zu_e
    }

    pub fn b2_o(&self) -> T {
        self.beta2 + self.rho_zu_o
    }

    /// `Var(U - ρ_zu Z)` in the experimental group.
    pub fn sigma2_e(&self) -> T {
        T::one() - self.rho_zu_e * self.rho_zu_e
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FusionError::InvalidConfig(m));
        for (name, v) in [
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("gamma", self.gamma),
            ("rho_uv_scaled", self.rho_uv_scaled),
            ("theta", self.theta),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        for (name, r) in [("rho_zu_e", self.rho_zu_e), ("rho_zu_o", self.rho_zu_o)] {
            if !(r.abs() < T::one()) {
                return bad(format!("{name} = {r} outside (-1, 1)"));
            }
        }
        let s = self.sigma_v2_value();
        if !(s > T::zero()) || !s.is_finite() {
            return bad(format!("sigma_v2 = {s} must be positive"));
        }
        if !(self.pi_e > T::zero() && self.pi_e <= T::one()) {
            return bad(format!("pi_E = {} outside (0, 1]", self.pi_e));
        }
        if self.n_e < 3 {
            return bad(format!("n_E = {} must be at least 3", self.n_e));
        }
        if let DesignRule::QuantileTails(q) = self.design {
            let floor = self.pi_e / T::lit(2.0) * (T::one() - T::lit(1e-12));
            if !(q >= floor && q <= T::lit(0.5)) {
                return Err(FusionError::InfeasibleDesign(format!(
                    "Q = {q} must lie in [pi_E/2, 0.5] with pi_E = {}",
                    self.pi_e
                )));
            }
        }
        self.factor(self.rho_zu_e)?;
        self.factor(self.rho_zu_o)?;
        Ok(())
    }

    /// Factorizes `Cov(U, V | Z) = [[1 - ρ², cσ_v], [cσ_v, σ_v²]]`; the joint
    /// `(Z, U, V)` covariance is PSD exactly when this one is.
    pub(crate) fn factor(&self, rho_zu: T) -> Result<ConditionalFactor> {
        let rho = rho_zu.as_f64();
        let s2 = self.sigma_v2_value().as_f64();
        let s = s2.sqrt();
        let c = self.rho_uv_scaled.as_f64() * s;
        let a = 1.0 - rho * rho;
        let l11 = a.sqrt();
        let l21 = if l11 > 0.0 { c / l11 } else { 0.0 };
        let rem = s2 - l21 * l21;
        let tol = 1e-12 * s2.max(1.0);
        if rem < -tol || (l11 == 0.0 && c.abs() > tol) {
            return Err(FusionError::InvalidConfig(format!(
                "covariance of (Z, U, V) is not positive semidefinite (rho_zu = {rho}, c = {})",
                self.rho_uv_scaled
            )));
        }
        Ok(ConditionalFactor {
            rho_zu: rho,
            l11,
            l21,
            l22: rem.max(0.0).sqrt(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = SimulationConfig::<f64>::default();
        c.validate().unwrap();
        assert_eq!(c.n_o(), 1900);
        assert!((c.sigma_v2_value() - 0.0975).abs() < 1e-15);
        assert!((c.b2_e() - 0.5).abs() < 1e-15);
        assert!((c.sigma2_e() - 0.84).abs() < 1e-15);
    }

    #[test]
    fn psd_boundary() {
        let c = SimulationConfig::<f64> {
            rho_zu_o: 0.8,
            rho_uv_scaled: 0.7,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(FusionError::InvalidConfig(_))));
        let c = SimulationConfig::<f64> {
            rho_zu_o: 0.6,
            rho_uv_scaled: 0.8,
            ..Default::default()
        };
        c.validate().unwrap();
    }

    #[test]
    fn quantile_bounds() {
        let mut c = SimulationConfig::<f64> {
            design: DesignRule::QuantileTails(0.025),
            ..Default::default()
        };
        c.validate().unwrap();
        c.design = DesignRule::QuantileTails(0.02);
        assert!(matches!(c.validate(), Err(FusionError::InfeasibleDesign(_))));
        c.design = DesignRule::QuantileTails(0.6);
        assert!(c.validate().is_err());
    }

    #[test]
    fn rejects_bad_scalars() {
        for c in [
            SimulationConfig::<f64> { pi_e: 0.0, ..Default::default() },
            SimulationConfig::<f64> { rho_zu_e: 1.0, ..Default::default() },
            SimulationConfig::<f64> { gamma: 1.0, ..Default::default() },
            SimulationConfig::<f64> { n_e: 2, ..Default::default() },
            SimulationConfig::<f64> { theta: f64::NAN, ..Default::default() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
