use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use super::{draw_sample, SimulationConfig};
use crate::data::{split, EstimateReport};
use crate::error::{FusionError, Result};
use crate::estimators::{Estimator, EstimatorConfig, ObsContext, Weighting};
use crate::robustness::{cv_regularized, cv_weighted, default_lambda_grid, default_weight_grid};
use crate::scalar::Scalar;

/// An estimator as run inside the harness, including the LOOCV-tuned ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SimEstimator<T> {
    Plain(Estimator<T>),
    /// Weighting at the LOOCV-selected `w_O` over the default grid.
    CvWeighted,
    /// Regularized regression at the LOOCV-selected `λ` over the default grid.
    CvRegularized,
}

impl<T: Scalar> SimEstimator<T> {
    /// Rows of the baseline comparison table.
    pub fn table_set() -> Vec<Self> {
        vec![
            SimEstimator::Plain(Estimator::ExperimentOnly),
            SimEstimator::Plain(Estimator::Gmm(Weighting::Optimal)),
            SimEstimator::Plain(Estimator::ObsOls),
            SimEstimator::Plain(Estimator::ObsIv),
        ]
    }

    pub fn fit(&self, ds_exp: &crate::data::Block<T>, ctx: &ObsContext<T>, cfg: &EstimatorConfig<T>) -> Result<EstimateReport<T>> {
        match self {
            SimEstimator::Plain(e) => e.fit(ds_exp, ctx, cfg),
            SimEstimator::CvWeighted => cv_weighted(ds_exp, ctx, &default_weight_grid(), cfg),
            SimEstimator::CvRegularized => cv_regularized(ds_exp, ctx, &default_lambda_grid(), cfg),
        }
    }
}

impl<T: Scalar> fmt::Display for SimEstimator<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimEstimator::Plain(e) => write!(f, "{e}"),
            SimEstimator::CvWeighted => write!(f, "cv-weighted"),
            SimEstimator::CvRegularized => write!(f, "cv-regularized"),
        }
    }
}

impl<T: Scalar> FromStr for SimEstimator<T> {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cv-weighted" => Ok(SimEstimator::CvWeighted),
            "cv-regularized" => Ok(SimEstimator::CvRegularized),
            other => other.parse().map(SimEstimator::Plain),
        }
    }
}

/// Raw `β̂₁` draws: `estimates[r][k]` is estimator `k` in replication `r`,
/// `None` when that fit failed.
#[derive(Clone, Debug, PartialEq)]
pub struct Replications<T> {
    pub estimators: Vec<SimEstimator<T>>,
    pub estimates: Vec<Vec<Option<T>>>,
}

impl<T: Scalar> Replications<T> {
    /// Successful draws of estimator `k`, in replication order.
    pub fn column(&self, k: usize) -> Vec<T> {
        self.estimates.iter().filter_map(|r| r[k]).collect()
    }

    /// Replications where every listed estimator succeeded.
    pub fn paired(&self, ks: &[usize]) -> Vec<Vec<T>> {
        self.estimates
            .iter()
            .filter_map(|r| ks.iter().map(|&k| r[k]).collect::<Option<Vec<T>>>())
            .collect()
    }
}

/// Draws `replications` datasets and fits every estimator on each. The
/// output order is the replication order whatever the thread schedule.
pub fn run_replications<T: Scalar>(
    cfg: &SimulationConfig<T>,
    estimators: &[SimEstimator<T>],
    replications: usize,
    est_cfg: &EstimatorConfig<T>,
) -> Result<Replications<T>> {
    cfg.validate()?;
    let estimates = (0..replications)
        .into_par_iter()
        .map(|r| {
            let ds = draw_sample(cfg, r as u64)?;
            let (exp, obs) = split(&ds);
            let ctx = ObsContext::new(&obs, est_cfg);
            Ok(estimators
                .iter()
                .map(|e| e.fit(&exp, &ctx, est_cfg).ok().map(|rep| rep.beta1_hat))
                .collect())
        })
        .collect::<Result<Vec<Vec<Option<T>>>>>()?;
    Ok(Replications {
        estimators: estimators.to_vec(),
        estimates,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorSummary<T> {
    pub estimator: String,
    pub mean: T,
    pub bias: T,
    pub bias2: T,
    /// Across-replication variance with divisor `n`.
    pub variance: T,
    pub mse: T,
    /// Standard error of the mean estimate.
    pub mc_se: T,
    pub relative_mse: T,
    pub efficiency_gain: T,
    pub failures: usize,
    pub successes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloSummary<T> {
    pub truth: T,
    pub replications: usize,
    pub rows: Vec<EstimatorSummary<T>>,
}

impl<T: Scalar> MonteCarloSummary<T> {
    pub fn row(&self, name: &str) -> Option<&EstimatorSummary<T>> {
        self.rows.iter().find(|r| r.estimator == name)
    }

    pub const CSV_HEADER: &'static str =
        "estimator,bias,bias2,variance,mse,relative_mse,efficiency_gain,failures,replications";

    /// Rows without header, each prefixed by `prefix` (used for sweeps).
    pub fn csv_rows(&self, prefix: &str) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&format!(
                "{prefix}{},{},{},{},{},{},{},{},{}\n",
                r.estimator, r.bias, r.bias2, r.variance, r.mse, r.relative_mse, r.efficiency_gain, r.failures,
                self.replications
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{}\n{}", Self::CSV_HEADER, self.csv_rows(""))
    }
}

struct Moments<T> {
    mean: T,
    variance: T,
    mse: T,
    n: usize,
}

fn moments<T: Scalar>(v: &[T], truth: T) -> Option<Moments<T>> {
    if v.is_empty() {
        return None;
    }
    let n = T::from_count(v.len());
    let mean = v.iter().fold(T::zero(), |a, b| a + *b) / n;
    let variance = v.iter().fold(T::zero(), |a, b| a + (*b - mean) * (*b - mean)) / n;
    let mse = v.iter().fold(T::zero(), |a, b| a + (*b - truth) * (*b - truth)) / n;
    Some(Moments {
        mean,
        variance,
        mse,
        n: v.len(),
    })
}

/// Bias, variance and MSE per estimator. `reference` is the MSE used as the
/// denominator of `relative_mse`.
pub fn summarize<T: Scalar>(reps: &Replications<T>, truth: T, reference: T) -> Result<MonteCarloSummary<T>> {
    let total = reps.estimates.len();
    if total < 2 {
        return Err(FusionError::TooFewObservations { need: 2, have: total });
    }
    let mut rows = Vec::with_capacity(reps.estimators.len());
    for (k, e) in reps.estimators.iter().enumerate() {
        let col = reps.column(k);
        let failures = total - col.len();
        // tolerated below 1% of replications
        if failures * 100 >= total {
            return Err(FusionError::TooManyFailures {
                estimator: e.to_string(),
                failures,
                replications: total,
            });
        }
        let m = moments(&col, truth).expect("at least one success");
        let bias = m.mean - truth;
        let relative_mse = m.mse / reference;
        rows.push(EstimatorSummary {
            estimator: e.to_string(),
            mean: m.mean,
            bias,
            bias2: bias * bias,
            variance: m.variance,
            mse: m.mse,
            mc_se: (m.variance / T::from_count(m.n)).sqrt(),
            relative_mse,
            efficiency_gain: T::one() - relative_mse,
            failures,
            successes: m.n,
        });
    }
    Ok(MonteCarloSummary {
        truth,
        replications: total,
        rows,
    })
}

/// Runs the harness and summarizes it against the experiment-only MSE, which
/// is computed even when it is not in `estimators`.
pub fn run_monte_carlo<T: Scalar>(
    cfg: &SimulationConfig<T>,
    estimators: &[SimEstimator<T>],
    replications: usize,
    est_cfg: &EstimatorConfig<T>,
) -> Result<MonteCarloSummary<T>> {
    if replications < 2 {
        return Err(FusionError::TooFewObservations { need: 2, have: replications });
    }
    let baseline = SimEstimator::Plain(Estimator::ExperimentOnly);
    let mut all = estimators.to_vec();
    let ref_idx = match all.iter().position(|e| *e == baseline) {
        Some(i) => i,
        None => {
            all.push(baseline);
            all.len() - 1
        }
    };
    let reps = run_replications(cfg, &all, replications, est_cfg)?;
    let reference = moments(&reps.column(ref_idx), cfg.beta1)
        .ok_or(FusionError::TooManyFailures {
            estimator: baseline.to_string(),
            failures: replications,
            replications,
        })?
        .mse;
    let mut s = summarize(&reps, cfg.beta1, reference)?;
    s.rows.truncate(estimators.len());
    Ok(s)
}
