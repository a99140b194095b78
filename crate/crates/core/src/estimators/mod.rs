//! Point estimators of the causal slope `β₁`.
//!
//! Every estimator is a function of the experimental block and a precomputed
//! [`ObsContext`]. Keeping the observational side fixed is what makes the
//! leave-one-out refits in [`crate::robustness`] cheap.

pub mod gmm;
pub mod observational;
pub mod ols;
pub mod regularized;
pub mod weighting;

use std::fmt;
use std::str::FromStr;

use crate::data::{split, Block, EstimateReport, FusedDataset, Method};
use crate::error::{FusionError, Result};
use crate::scalar::Scalar;

pub use gmm::{gmm_fit, GmmFit, MomentSystem, Weighting};
pub use observational::{
    bias_corrected_obs, first_stage, incorrect_iv, summarize_obs, BiasCorrected, FirstStage,
    ObsMoments, ObsSummary,
};
pub use ols::{ols2, OlsFit};
pub use regularized::{regularized_regression, Lambda, RegularizedFit};
pub use weighting::{fixed_weight, weighted_combine, WeightedCombination};

/// How the within-`O` covariance of `(b̂_IV, γ̂)` is estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ObsVariance {
    InfluenceFunction,
    Bootstrap { draws: usize, seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig<T> {
    /// Relative singular-value cutoff for 2x2 systems.
    pub singular_tol: T,
    /// Minimum `|corr(X, Z | O)|` before the IV ratio is attempted.
    pub weak_corr_tol: T,
    pub obs_variance: ObsVariance,
}

impl<T: Scalar> Default for EstimatorConfig<T> {
    fn default() -> Self {
        Self {
            singular_tol: T::lit(1e-10),
            weak_corr_tol: T::lit(1e-8),
            obs_variance: ObsVariance::InfluenceFunction,
        }
    }
}

/// Everything the estimators need from the observational block.
#[derive(Clone, Debug)]
pub struct ObsContext<T> {
    pub moments: ObsMoments<T>,
    pub summary: std::result::Result<ObsSummary<T>, FusionError>,
}

impl<T: Scalar> ObsContext<T> {
    pub fn new(obs: &Block<T>, cfg: &EstimatorConfig<T>) -> Self {
        let moments = ObsMoments::from_block(obs);
        let summary = summarize_obs(obs, &moments, cfg);
        Self { moments, summary }
    }

    pub fn summary(&self) -> Result<&ObsSummary<T>> {
        self.summary.as_ref().map_err(Clone::clone)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Estimator<T> {
    ExperimentOnly,
    ObsOls,
    ObsIv,
    BiasCorrectedObs,
    /// Inverse-variance weighting of the experimental and bias-corrected
    /// observational estimates.
    Weighted,
    /// Weighting with a fixed observational weight `w_O`.
    FixedWeight(T),
    Regularized(Lambda<T>),
    Gmm(Weighting<T>),
}

impl<T: Scalar> Estimator<T> {
    pub fn method(&self) -> Method {
        match self {
            Estimator::ExperimentOnly => Method::ExperimentOnly,
            Estimator::ObsOls => Method::ObsOls,
            Estimator::ObsIv => Method::ObsIv,
            Estimator::BiasCorrectedObs => Method::BiasCorrectedObs,
            Estimator::Weighted | Estimator::FixedWeight(_) => Method::Weighted,
            Estimator::Regularized(_) => Method::Regularized,
            Estimator::Gmm(_) => Method::CombinedGmm,
        }
    }

    /// Fit on an experimental block with fixed observational statistics.
    pub fn fit(
        &self,
        exp: &Block<T>,
        obs: &ObsContext<T>,
        cfg: &EstimatorConfig<T>,
    ) -> Result<EstimateReport<T>> {
        let tol = cfg.singular_tol;
        let n_e = T::from_count(exp.len());
        let n_o = T::from_count(obs.moments.n());
        match self {
            Estimator::ExperimentOnly => {
                let f = ols2(exp, tol)?;
                Ok(EstimateReport::new(Method::ExperimentOnly, f.beta1, Some(f.b2), f.var_beta1())
                    .with_diag("sigma2_hat", f.sigma2)
                    .with_diag("var_b2", f.var_b2())
                    .with_diag("n_e", n_e))
            }
            Estimator::ObsOls => {
                let f = ols::ols2_from_cross_products(&obs.moments.cp, tol)?;
                Ok(EstimateReport::new(Method::ObsOls, f.beta1, Some(f.b2), f.var_beta1())
                    .with_diag("sigma2_hat", f.sigma2)
                    .with_diag("n_o", n_o))
            }
            Estimator::ObsIv => {
                let s = obs.summary()?;
                Ok(EstimateReport::new(Method::ObsIv, s.b_iv, None, s.var_b_iv)
                    .with_diag("b_iv_hat", s.b_iv)
                    .with_diag("gamma_hat", s.gamma)
                    .with_diag("n_o", n_o))
            }
            Estimator::BiasCorrectedObs => {
                let f = ols2(exp, tol)?;
                let s = obs.summary()?;
                let bc = bias_corrected_obs(s, f.b2, f.var_b2(), cfg)?;
                Ok(obs_diagnostics(
                    EstimateReport::new(Method::BiasCorrectedObs, bc.beta1, Some(f.b2), bc.var),
                    s,
                ))
            }
            Estimator::Weighted | Estimator::FixedWeight(_) => {
                let f = ols2(exp, tol)?;
                let s = obs.summary()?;
                let bc = bias_corrected_obs(s, f.b2, f.var_b2(), cfg)?;
                let c = match self {
                    Estimator::FixedWeight(w) => {
                        if !(*w >= T::zero() && *w <= T::one()) {
                            return Err(FusionError::InvalidHyperparameter(format!(
                                "w_O must lie in [0, 1], got {w}"
                            )));
                        }
                        fixed_weight(f.beta1, f.var_beta1(), bc.beta1, bc.var, *w)
                    }
                    _ => weighted_combine(f.beta1, f.var_beta1(), bc.beta1, bc.var)?,
                };
                Ok(obs_diagnostics(
                    EstimateReport::new(Method::Weighted, c.beta1, Some(f.b2), c.var),
                    s,
                )
                .with_hyper("w_o", c.w_o)
                .with_hyper("w_e", c.w_e)
                .with_diag("beta1_e", f.beta1)
                .with_diag("var_beta1_e", f.var_beta1())
                .with_diag("beta1_o", bc.beta1)
                .with_diag("var_beta1_o", bc.var))
            }
            Estimator::Regularized(lambda) => {
                let f = ols2(exp, tol)?;
                let s = obs.summary()?;
                let cp = exp.cross_products();
                let fit = regularized_regression(&cp, s.b_iv, s.gamma, *lambda, tol)?;
                let var = f.sigma2 * fit.exp_cov_unit[0][0] + regularized_obs_var(&cp, s, *lambda, tol)?;
                let mut r = obs_diagnostics(
                    EstimateReport::new(Method::Regularized, fit.beta1, Some(fit.b2), var),
                    s,
                )
                .with_diag("constraint_residual", fit.constraint_residual(s.b_iv, s.gamma));
                r = match lambda {
                    Lambda::Finite(l) => r.with_hyper("lambda", *l),
                    Lambda::Infinite => r.with_hyper("lambda_infinite", T::one()),
                };
                Ok(r)
            }
            Estimator::Gmm(w) => {
                let cp = exp.cross_products();
                let f = ols::ols2_from_cross_products(&cp, tol)?;
                let g = gmm_fit(exp, &cp, &f, Some(&obs.moments), w, tol)?;
                let mut r = EstimateReport::new(Method::CombinedGmm, g.beta1, Some(g.b2), g.cov[0][0])
                    .with_diag("sigma2_hat", f.sigma2)
                    .with_diag("j_stat", g.j_stat)
                    .with_diag("n_e", n_e)
                    .with_diag("n_o", n_o);
                if let Ok(s) = obs.summary() {
                    r = obs_diagnostics(r, s);
                }
                if matches!(w, Weighting::TwoStepFeasible) {
                    r = r.with_hyper("two_step", T::one());
                }
                Ok(r)
            }
        }
    }

    /// Fit on a whole dataset.
    pub fn estimate(&self, ds: &FusedDataset<T>, cfg: &EstimatorConfig<T>) -> Result<EstimateReport<T>> {
        let (exp, obs) = split(ds);
        let ctx = ObsContext::new(&obs, cfg);
        self.fit(&exp, &ctx, cfg)
    }
}

fn obs_diagnostics<T: Scalar>(r: EstimateReport<T>, s: &ObsSummary<T>) -> EstimateReport<T> {
    r.with_diag("b_iv_hat", s.b_iv)
        .with_diag("gamma_hat", s.gamma)
        .with_diag("var_b_iv", s.var_b_iv)
        .with_diag("var_gamma", s.var_gamma)
}

/// Delta-method contribution of `(b̂_IV, γ̂)` noise to the regularized `β̂₁`,
/// with a central-difference gradient.
fn regularized_obs_var<T: Scalar>(
    cp: &crate::data::CrossProducts<T>,
    s: &ObsSummary<T>,
    lambda: Lambda<T>,
    tol: T,
) -> Result<T> {
    let eps = T::epsilon().cbrt();
    let two = T::lit(2.0);
    let f = |b: T, g: T| regularized_regression(cp, b, g, lambda, tol).map(|r| r.beta1);
    let hb = eps * s.b_iv.abs().max(T::one());
    let hg = eps * s.gamma.abs().max(T::one());
    let db = (f(s.b_iv + hb, s.gamma)? - f(s.b_iv - hb, s.gamma)?) / (two * hb);
    let dg = (f(s.b_iv, s.gamma + hg)? - f(s.b_iv, s.gamma - hg)?) / (two * hg);
    let v = db * db * s.var_b_iv + dg * dg * s.var_gamma + two * db * dg * s.cov_b_iv_gamma;
    Ok(v.max(T::zero()))
}

/// Combined GMM on a whole dataset.
pub fn gmm_combine<T: Scalar>(
    ds: &FusedDataset<T>,
    weighting: Weighting<T>,
    cfg: &EstimatorConfig<T>,
) -> Result<EstimateReport<T>> {
    Estimator::Gmm(weighting).estimate(ds, cfg)
}

impl<T: Scalar> fmt::Display for Estimator<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Estimator::ExperimentOnly => f.write_str("experiment-only"),
            Estimator::ObsOls => f.write_str("ols-obs"),
            Estimator::ObsIv => f.write_str("iv-obs"),
            Estimator::BiasCorrectedObs => f.write_str("bias-corrected"),
            Estimator::Weighted => f.write_str("weighted"),
            Estimator::FixedWeight(w) => write!(f, "weighted@{w}"),
            Estimator::Regularized(l) => write!(f, "regularized@{l}"),
            Estimator::Gmm(Weighting::Optimal) => f.write_str("gmm"),
            Estimator::Gmm(Weighting::TwoStepFeasible) => f.write_str("gmm-two-step"),
            Estimator::Gmm(Weighting::Custom(_)) => f.write_str("gmm-custom"),
        }
    }
}

impl<T: Scalar> FromStr for Estimator<T> {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || FusionError::InvalidConfig(format!("unknown estimator `{s}`"));
        if let Some(w) = s.strip_prefix("weighted@") {
            let w: T = w.parse().map_err(|_| bad())?;
            return Ok(Estimator::FixedWeight(w));
        }
        if let Some(l) = s.strip_prefix("regularized@") {
            return Ok(Estimator::Regularized(l.parse()?));
        }
        Ok(match s {
            "experiment-only" | "experiment_only" | "exp" => Estimator::ExperimentOnly,
            "ols-obs" | "ols_obs" => Estimator::ObsOls,
            "iv-obs" | "iv_obs" => Estimator::ObsIv,
            "bias-corrected" | "bias_corrected" => Estimator::BiasCorrectedObs,
            "weighted" => Estimator::Weighted,
            "regularized" => Estimator::Regularized(Lambda::Infinite),
            "gmm" => Estimator::Gmm(Weighting::Optimal),
            "gmm-two-step" | "gmm_two_step" => Estimator::Gmm(Weighting::TwoStepFeasible),
            _ => return Err(bad()),
        })
    }
}
