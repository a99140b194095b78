//! Leave-one-out cross-validation on the experimental block.
//!
//! Only experimental units are left out. The observational statistics are
//! computed once and held fixed across folds. Predictions include the fold's
//! intercept `ȳ - β̂₁x̄ - b̂₂z̄`, matching the intercept every fit carries.

use std::fmt;

use rayon::prelude::*;

use crate::data::{split, Block, CrossProducts, EstimateReport, FusedDataset};
use crate::error::{FusionError, Result};
use crate::estimators::{
    bias_corrected_obs, ols2, regularized_regression, Estimator, EstimatorConfig, Lambda, ObsContext,
};
use crate::linalg::inv2;
use crate::scalar::Scalar;

const MIN_EXPERIMENTAL: usize = 4;

/// Cross-validation errors over a hyperparameter grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CVResult<H, T> {
    pub grid: Vec<H>,
    pub cv_error: Vec<T>,
    /// Index of the first minimizer of `cv_error`.
    pub selected: usize,
}

impl<H: Copy, T: Scalar> CVResult<H, T> {
    fn from_errors(grid: Vec<H>, cv_error: Vec<T>) -> Self {
        let mut selected = 0;
        for (i, e) in cv_error.iter().enumerate() {
            if *e < cv_error[selected] {
                selected = i;
            }
        }
        Self { grid, cv_error, selected }
    }

    pub fn best(&self) -> H {
        self.grid[self.selected]
    }

    pub fn best_error(&self) -> T {
        self.cv_error[self.selected]
    }
}

impl<H: fmt::Display, T: Scalar> CVResult<H, T> {
    /// `hyperparameter,cv_error,selected` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("hyperparameter,cv_error,selected\n");
        for (i, (h, e)) in self.grid.iter().zip(&self.cv_error).enumerate() {
            out.push_str(&format!("{h},{e},{}\n", u8::from(i == self.selected)));
        }
        out
    }
}

/// `{0, 0.05, ..., 1}`.
pub fn default_weight_grid<T: Scalar>() -> Vec<T> {
    (0..=20).map(|i| T::from_count(i) / T::lit(20.0)).collect()
}

/// `{0}`, 25 log-spaced values on `[1e-3, 1e4]`, then `INF`.
pub fn default_lambda_grid<T: Scalar>() -> Vec<Lambda<T>> {
    let mut g = vec![Lambda::Finite(T::zero())];
    for i in 0..25 {
        let e = -3.0 + 7.0 * i as f64 / 24.0;
        g.push(Lambda::Finite(T::lit(10f64.powf(e))));
    }
    g.push(Lambda::Infinite);
    g
}

fn check_size<T: Scalar>(exp: &Block<T>) -> Result<()> {
    if exp.len() < MIN_EXPERIMENTAL {
        return Err(FusionError::TooFewObservations {
            need: MIN_EXPERIMENTAL,
            have: exp.len(),
        });
    }
    Ok(())
}

fn fold_error<T: Scalar>(cp: &CrossProducts<T>, y: T, x: T, z: T, beta1: T, b2: T) -> T {
    let intercept = cp.mean_y - beta1 * cp.mean_x - b2 * cp.mean_z;
    let r = y - intercept - beta1 * x - b2 * z;
    r * r
}

fn fold_err(i: usize, e: FusionError) -> FusionError {
    match e {
        FusionError::SingularDesign(_) | FusionError::DegenerateZ => FusionError::DegenerateFold(i),
        other => other,
    }
}

/// Runs `per_fold` on every leave-one-out fold and returns the per-fold
/// outputs in index order.
fn folds<T: Scalar, R: Send>(
    exp: &Block<T>,
    per_fold: impl Fn(usize, &Block<T>, &CrossProducts<T>) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    check_size(exp)?;
    (0..exp.len())
        .into_par_iter()
        .map(|i| {
            let fold = exp.without(i);
            let cp = fold.cross_products();
            per_fold(i, &fold, &cp).map_err(|e| fold_err(i, e))
        })
        .collect()
}

fn mean_in_order<T: Scalar>(v: impl Iterator<Item = T>, n: usize) -> T {
    v.fold(T::zero(), |a, b| a + b) / T::from_count(n)
}

/// LOOCV prediction error of `est` over the experimental units of `ds`.
pub fn loocv_error<T: Scalar>(ds: &FusedDataset<T>, est: &Estimator<T>, cfg: &EstimatorConfig<T>) -> Result<T> {
    let (exp, obs) = split(ds);
    let ctx = ObsContext::new(&obs, cfg);
    loocv_error_blocks(&exp, &ctx, est, cfg)
}

pub fn loocv_error_blocks<T: Scalar>(
    exp: &Block<T>,
    ctx: &ObsContext<T>,
    est: &Estimator<T>,
    cfg: &EstimatorConfig<T>,
) -> Result<T> {
    let errs = folds(exp, |i, fold, cp| {
        let r = est.fit(fold, ctx, cfg)?;
        let b2 = r.b2_hat.ok_or_else(|| {
            FusionError::InvalidConfig(format!("{est} does not estimate b2; cannot predict"))
        })?;
        Ok(fold_error(cp, exp.y[i], exp.x[i], exp.z[i], r.beta1_hat, b2))
    })?;
    Ok(mean_in_order(errs.into_iter(), exp.len()))
}

/// Closed-form LOOCV of the experiment-only regression via leverages,
/// `mean((e_i / (1 - h_ii))²)`.
pub fn loocv_ols_closed_form<T: Scalar>(exp: &Block<T>, cfg: &EstimatorConfig<T>) -> Result<T> {
    check_size(exp)?;
    let f = ols2(exp, cfg.singular_tol)?;
    let cp = exp.cross_products();
    let s_inv = inv2(&[[cp.sxx, cp.sxz], [cp.sxz, cp.szz]])
        .ok_or_else(|| FusionError::SingularDesign("experimental design".into()))?;
    let n = exp.len();
    let nf = T::from_count(n);
    let mut total = T::zero();
    for i in 0..n {
        let dx = exp.x[i] - cp.mean_x;
        let dz = exp.z[i] - cp.mean_z;
        let lev = dx * (s_inv[0][0] * dx + s_inv[0][1] * dz) + dz * (s_inv[1][0] * dx + s_inv[1][1] * dz);
        let h = T::one() / nf + lev;
        if h >= T::one() - T::epsilon() {
            return Err(FusionError::DegenerateFold(i));
        }
        let e = exp.y[i] - f.predict(exp.x[i], exp.z[i]);
        let r = e / (T::one() - h);
        total = total + r * r;
    }
    Ok(total / nf)
}

/// LOOCV over fixed observational weights `w_O`.
pub fn tune_weight<T: Scalar>(ds: &FusedDataset<T>, grid: &[T], cfg: &EstimatorConfig<T>) -> Result<CVResult<T, T>> {
    let (exp, obs) = split(ds);
    let ctx = ObsContext::new(&obs, cfg);
    tune_weight_blocks(&exp, &ctx, grid, cfg)
}

pub fn tune_weight_blocks<T: Scalar>(
    exp: &Block<T>,
    ctx: &ObsContext<T>,
    grid: &[T],
    cfg: &EstimatorConfig<T>,
) -> Result<CVResult<T, T>> {
    if grid.is_empty() {
        return Err(FusionError::InvalidHyperparameter("empty weight grid".into()));
    }
    if let Some(w) = grid.iter().find(|w| !(**w >= T::zero() && **w <= T::one())) {
        return Err(FusionError::InvalidHyperparameter(format!("w_O must lie in [0, 1], got {w}")));
    }
    let only_experimental = grid.iter().all(|w| *w == T::zero());
    let per_fold = folds(exp, |i, fold, cp| {
        let f = ols2(fold, cfg.singular_tol)?;
        let beta1_o = if only_experimental {
            f.beta1
        } else {
            bias_corrected_obs(ctx.summary()?, f.b2, f.var_b2(), cfg)?.beta1
        };
        Ok(grid
            .iter()
            .map(|&w| {
                let b = w * beta1_o + (T::one() - w) * f.beta1;
                fold_error(cp, exp.y[i], exp.x[i], exp.z[i], b, f.b2)
            })
            .collect::<Vec<T>>())
    })?;
    let n = exp.len();
    let errors = (0..grid.len())
        .map(|k| mean_in_order(per_fold.iter().map(|v| v[k]), n))
        .collect();
    Ok(CVResult::from_errors(grid.to_vec(), errors))
}

/// LOOCV over penalty strengths of the regularized regression.
pub fn tune_lambda<T: Scalar>(
    ds: &FusedDataset<T>,
    grid: &[Lambda<T>],
    cfg: &EstimatorConfig<T>,
) -> Result<CVResult<Lambda<T>, T>> {
    let (exp, obs) = split(ds);
    let ctx = ObsContext::new(&obs, cfg);
    tune_lambda_blocks(&exp, &ctx, grid, cfg)
}

pub fn tune_lambda_blocks<T: Scalar>(
    exp: &Block<T>,
    ctx: &ObsContext<T>,
    grid: &[Lambda<T>],
    cfg: &EstimatorConfig<T>,
) -> Result<CVResult<Lambda<T>, T>> {
    if grid.is_empty() {
        return Err(FusionError::InvalidHyperparameter("empty lambda grid".into()));
    }
    for l in grid {
        l.validate()?;
    }
    let s = ctx.summary()?;
    let per_fold = folds(exp, |i, _fold, cp| {
        grid.iter()
            .map(|&l| {
                let f = regularized_regression(cp, s.b_iv, s.gamma, l, cfg.singular_tol)?;
                Ok(fold_error(cp, exp.y[i], exp.x[i], exp.z[i], f.beta1, f.b2))
            })
            .collect::<Result<Vec<T>>>()
    })?;
    let n = exp.len();
    let errors = (0..grid.len())
        .map(|k| mean_in_order(per_fold.iter().map(|v| v[k]), n))
        .collect();
    Ok(CVResult::from_errors(grid.to_vec(), errors))
}

/// Weighting estimator at the LOOCV-selected `w_O`.
pub fn cv_weighted<T: Scalar>(
    exp: &Block<T>,
    ctx: &ObsContext<T>,
    grid: &[T],
    cfg: &EstimatorConfig<T>,
) -> Result<EstimateReport<T>> {
    let cv = tune_weight_blocks(exp, ctx, grid, cfg)?;
    let r = Estimator::FixedWeight(cv.best()).fit(exp, ctx, cfg)?;
    Ok(r.with_diag("cv_error", cv.best_error()))
}

/// Regularized estimator at the LOOCV-selected `λ`.
pub fn cv_regularized<T: Scalar>(
    exp: &Block<T>,
    ctx: &ObsContext<T>,
    grid: &[Lambda<T>],
    cfg: &EstimatorConfig<T>,
) -> Result<EstimateReport<T>> {
    let cv = tune_lambda_blocks(exp, ctx, grid, cfg)?;
    let r = Estimator::Regularized(cv.best()).fit(exp, ctx, cfg)?;
    Ok(r.with_diag("cv_error", cv.best_error()))
}
