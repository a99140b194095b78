//! Predicted variance of the combined GMM estimator relative to the
//! experiment-only estimator, and the moments of `Z` under quantile-tail
//! experimental designs.

use crate::error::{FusionError, Result};
use crate::normal;
use crate::scalar::Scalar;

/// Population moments that determine the efficiency gain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentProfile<T> {
    /// Share of observational units, in `[0, 1)`.
    pub pi_o: T,
    pub var_x_e: T,
    pub var_x_o: T,
    pub var_z_e: T,
    pub var_z_o: T,
    /// First-stage slope of `X` on `Z` in the observational group.
    pub gamma: T,
    /// Variance of the residual `ε = Y - β₁X - b₂Z`.
    pub sigma2: T,
    pub n_e: usize,
}

impl<T: Scalar> MomentProfile<T> {
    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        if !(self.pi_o >= zero && self.pi_o < T::one()) {
            return Err(FusionError::InvalidConfig(format!("pi_O = {} outside [0, 1)", self.pi_o)));
        }
        for (name, v) in [
            ("var_x_e", self.var_x_e),
            ("var_x_o", self.var_x_o),
            ("var_z_e", self.var_z_e),
            ("var_z_o", self.var_z_o),
            ("sigma2", self.sigma2),
        ] {
            if !(v > zero) || !v.is_finite() {
                return Err(FusionError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.gamma.is_finite() {
            return Err(FusionError::InvalidConfig("gamma must be finite".into()));
        }
        if self.n_e == 0 {
            return Err(FusionError::InvalidConfig("n_e must be positive".into()));
        }
        Ok(())
    }

    pub fn pi_e(&self) -> T {
        T::one() - self.pi_o
    }

    /// Pooled `Var(Z)` with count weights.
    pub fn var_z(&self) -> T {
        self.pi_o * self.var_z_o + self.pi_e() * self.var_z_e
    }

    /// Randomized-assignment profile where every group shares `Var(Z) = 1`
    /// and `X_O = γZ + V`.
    pub fn random_assignment(pi_o: T, gamma: T, sigma_v2: T, sigma2: T, n_e: usize) -> Self {
        Self {
            pi_o,
            var_x_e: T::one(),
            var_x_o: gamma * gamma + sigma_v2,
            var_z_e: T::one(),
            var_z_o: T::one(),
            gamma,
            sigma2,
            n_e,
        }
    }
}

/// `σ²/(n_E Var(X|E))`.
pub fn experiment_only_var<T: Scalar>(p: &MomentProfile<T>) -> T {
    p.sigma2 / (T::from_count(p.n_e) * p.var_x_e)
}

/// `(σ²/n_E) [Var(X|E) + π_O γ² Var(Z|O) Var(Z|E) / Var(Z)]⁻¹`.
pub fn asymptotic_var_gmm<T: Scalar>(p: &MomentProfile<T>) -> T {
    let gain = p.pi_o * p.gamma * p.gamma * p.var_z_o * p.var_z_e / p.var_z();
    p.sigma2 / T::from_count(p.n_e) / (p.var_x_e + gain)
}

/// `V(β̂ᴱ)/V(β̂ᴳᴹᴹ)` as the product of the observational share, the relative
/// variance of `Z`, first-stage relevance and the relative variance of `X`.
pub fn efficiency_ratio<T: Scalar>(p: &MomentProfile<T>) -> T {
    let rel_z = p.var_z_e / p.var_z();
    let relevance = p.gamma * p.gamma * p.var_z_o / p.var_x_o;
    let rel_x = p.var_x_o / p.var_x_e;
    T::one() + p.pi_o * rel_z * relevance * rel_x
}

/// Limit of [`efficiency_ratio`] as `π_O → 1` under full relevance and equal
/// `X` variances.
pub fn design_limit_ratio<T: Scalar>(var_z_e: T, var_z_o: T) -> T {
    T::one() + var_z_e / var_z_o
}

/// `E[Z² | |Z| > c]` for a standard normal with two-sided tail mass `2q`.
pub fn tail_second_moment<T: Scalar>(q: T) -> T {
    let c = normal::quantile(T::one() - q);
    T::one() + c * normal::pdf(c) / q
}

/// `E[Z² | |Z| < c]` for a standard normal with two-sided tail mass `2q`.
pub fn middle_second_moment<T: Scalar>(q: T) -> T {
    let half = T::lit(0.5);
    if q >= half {
        // empty middle; limit as c -> 0
        return T::zero();
    }
    let c = normal::quantile(T::one() - q);
    T::one() - T::lit(2.0) * c * normal::pdf(c) / (T::one() - T::lit(2.0) * q)
}

/// `(Var(Z|E), Var(Z|O))` when the experiment samples uniformly from the top
/// and bottom `q` quantiles of a standard normal `Z` at overall share `pi_e`.
pub fn quantile_design_variances<T: Scalar>(q: T, pi_e: T) -> Result<(T, T)> {
    let two = T::lit(2.0);
    if !(q > T::zero() && q <= T::lit(0.5)) || two * q < pi_e * (T::one() - T::lit(1e-9)) {
        return Err(FusionError::InfeasibleDesign(format!(
            "Q = {q} must lie in [pi_E/2, 0.5] with pi_E = {pi_e}"
        )));
    }
    let tail = tail_second_moment(q);
    let mid = middle_second_moment(q);
    let left_in_tails = (two * q - pi_e).max(T::zero());
    let var_o = ((T::one() - two * q) * mid + left_in_tails * tail) / (T::one() - pi_e);
    Ok((tail, var_o))
}

/// One row of the design table printed by the `design` subcommand.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignRow<T> {
    pub design: String,
    pub ratio: T,
    pub relative_mse: T,
}

/// Random assignment plus quantile-tail designs at each `q`.
pub fn design_table<T: Scalar>(
    pi_e: T,
    gamma: T,
    sigma_v2: T,
    sigma2: T,
    n_e: usize,
    qs: &[T],
) -> Result<Vec<DesignRow<T>>> {
    let base = MomentProfile::random_assignment(T::one() - pi_e, gamma, sigma_v2, sigma2, n_e);
    base.validate()?;
    let mut rows = Vec::with_capacity(qs.len() + 1);
    let r = efficiency_ratio(&base);
    rows.push(DesignRow {
        design: "random".into(),
        ratio: r,
        relative_mse: T::one() / r,
    });
    for &q in qs {
        let (vze, vzo) = quantile_design_variances(q, pi_e)?;
        let p = MomentProfile {
            var_z_e: vze,
            var_z_o: vzo,
            var_x_o: gamma * gamma * vzo + sigma_v2,
            ..base
        };
        let r = efficiency_ratio(&p);
        rows.push(DesignRow {
            design: format!("quantile:{q}"),
            ratio: r,
            relative_mse: T::one() / r,
        });
    }
    Ok(rows)
}
