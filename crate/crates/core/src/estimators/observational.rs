//! Statistics computed from the observational block alone: the first stage,
//! the (biased) IV estimate that treats `Z` as an instrument, and the
//! bias-corrected observational estimate of the effect.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Block, CrossProducts};
use crate::error::{FusionError, Result};
use crate::estimators::ols::OlsFit;
use crate::estimators::{EstimatorConfig, ObsVariance};
use crate::scalar::Scalar;

/// Centered second- and fourth-order sums of the observational block.
///
/// Everything the combined estimators need from `O` is a function of these,
/// which is what lets leave-one-out refits on `E` reuse them unchanged.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObsMoments<T> {
    pub cp: CrossProducts<T>,
    pub s_zzzz: T,
    pub s_xzzz: T,
    pub s_yzzz: T,
    pub s_xxzz: T,
    pub s_xyzz: T,
    pub s_yyzz: T,
}

impl<T: Scalar> ObsMoments<T> {
    pub fn from_block(b: &Block<T>) -> Self {
        let cp = b.cross_products();
        let mut s = [T::zero(); 6];
        for i in 0..b.len() {
            let (y, x, z) = (b.y[i] - cp.mean_y, b.x[i] - cp.mean_x, b.z[i] - cp.mean_z);
            let zz = z * z;
            s[0] = s[0] + zz * zz;
            s[1] = s[1] + x * z * zz;
            s[2] = s[2] + y * z * zz;
            s[3] = s[3] + x * x * zz;
            s[4] = s[4] + x * y * zz;
            s[5] = s[5] + y * y * zz;
        }
        Self {
            cp,
            s_zzzz: s[0],
            s_xzzz: s[1],
            s_yzzz: s[2],
            s_xxzz: s[3],
            s_xyzz: s[4],
            s_yyzz: s[5],
        }
    }

    pub fn n(&self) -> usize {
        self.cp.n
    }

    /// `Σ (ỹ - β₁x̃ - b₂z̃)² z̃²` without another pass over the rows.
    pub fn weighted_residual_square(&self, beta1: T, b2: T) -> T {
        let two = T::lit(2.0);
        self.s_yyzz + beta1 * beta1 * self.s_xxzz + b2 * b2 * self.s_zzzz
            - two * beta1 * self.s_xyzz
            - two * b2 * self.s_yzzz
            + two * beta1 * b2 * self.s_xzzz
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FirstStage<T> {
    pub gamma: T,
    pub var_gamma: T,
}

/// Regress `X` on `Z` in the observational block.
pub fn first_stage<T: Scalar>(obs: &Block<T>) -> Result<FirstStage<T>> {
    first_stage_from(&obs.cross_products())
}

fn first_stage_from<T: Scalar>(cp: &CrossProducts<T>) -> Result<FirstStage<T>> {
    if cp.n < 2 {
        return Err(FusionError::TooFewObservations { need: 2, have: cp.n });
    }
    if !(cp.szz > T::zero()) {
        return Err(FusionError::DegenerateZ);
    }
    let gamma = cp.sxz / cp.szz;
    let rss = (cp.sxx - gamma * cp.sxz).max(T::zero());
    let df = T::from_count((cp.n - 2).max(1));
    Ok(FirstStage {
        gamma,
        var_gamma: rss / df / cp.szz,
    })
}

fn check_relevance<T: Scalar>(cp: &CrossProducts<T>, cfg: &EstimatorConfig<T>) -> Result<()> {
    if !(cp.szz > T::zero()) {
        return Err(FusionError::DegenerateZ);
    }
    let denom = (cp.sxx * cp.szz).sqrt();
    let corr = if denom > T::zero() { cp.sxz / denom } else { T::zero() };
    if !(corr.abs() > cfg.weak_corr_tol) {
        return Err(FusionError::WeakFirstStage(corr.as_f64()));
    }
    Ok(())
}

/// `Ĉov(Y, Z) / Ĉov(X, Z)` in the observational block.
pub fn incorrect_iv<T: Scalar>(obs: &Block<T>, cfg: &EstimatorConfig<T>) -> Result<T> {
    let cp = obs.cross_products();
    check_relevance(&cp, cfg)?;
    Ok(cp.szy / cp.sxz)
}

/// Observational-side inputs to the combined estimators.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObsSummary<T> {
    pub b_iv: T,
    pub gamma: T,
    pub var_b_iv: T,
    pub var_gamma: T,
    pub cov_b_iv_gamma: T,
    pub n: usize,
}

/// IV estimate, first stage and the joint sampling covariance of the two.
pub fn summarize_obs<T: Scalar>(
    obs: &Block<T>,
    moments: &ObsMoments<T>,
    cfg: &EstimatorConfig<T>,
) -> Result<ObsSummary<T>> {
    let cp = &moments.cp;
    if cp.n < 3 {
        return Err(FusionError::TooFewObservations { need: 3, have: cp.n });
    }
    check_relevance(cp, cfg)?;
    let b_iv = cp.szy / cp.sxz;
    let gamma = cp.sxz / cp.szz;
    let (var_b_iv, var_gamma, cov_b_iv_gamma) = match cfg.obs_variance {
        ObsVariance::InfluenceFunction => influence_covariance(moments, b_iv, gamma),
        ObsVariance::Bootstrap { draws, seed } => bootstrap_covariance(obs, draws, seed)?,
    };
    Ok(ObsSummary {
        b_iv,
        gamma,
        var_b_iv,
        var_gamma,
        cov_b_iv_gamma,
        n: cp.n,
    })
}

/// Sandwich (influence-function) covariance of `(b̂_IV, γ̂)`:
/// `IF_b = z̃(ỹ - b x̃)/Sxz`, `IF_γ = z̃(x̃ - γ z̃)/Szz`.
fn influence_covariance<T: Scalar>(m: &ObsMoments<T>, b: T, g: T) -> (T, T, T) {
    let two = T::lit(2.0);
    let cp = &m.cp;
    let s_bb = m.s_yyzz - two * b * m.s_xyzz + b * b * m.s_xxzz;
    let s_gg = m.s_xxzz - two * g * m.s_xzzz + g * g * m.s_zzzz;
    let s_bg = m.s_xyzz - b * m.s_xxzz - g * m.s_yzzz + g * b * m.s_xzzz;
    let var_b = s_bb.max(T::zero()) / (cp.sxz * cp.sxz);
    let var_g = s_gg.max(T::zero()) / (cp.szz * cp.szz);
    let cov = s_bg / (cp.sxz * cp.szz);
    (var_b, var_g, cov)
}

fn bootstrap_covariance<T: Scalar>(obs: &Block<T>, draws: usize, seed: u64) -> Result<(T, T, T)> {
    let n = obs.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = vec![0usize; n];
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(draws);
    for _ in 0..draws {
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        let cp = obs.select(&idx).cross_products();
        if cp.szz > T::zero() && cp.sxz != T::zero() {
            pairs.push(((cp.szy / cp.sxz).as_f64(), (cp.sxz / cp.szz).as_f64()));
        }
    }
    if pairs.len() < 2 {
        return Err(FusionError::DegenerateZ);
    }
    let k = pairs.len() as f64;
    let mb = pairs.iter().map(|p| p.0).sum::<f64>() / k;
    let mg = pairs.iter().map(|p| p.1).sum::<f64>() / k;
    let (mut vb, mut vg, mut c) = (0.0, 0.0, 0.0);
    for (b, g) in &pairs {
        vb += (b - mb) * (b - mb);
        vg += (g - mg) * (g - mg);
        c += (b - mb) * (g - mg);
    }
    let d = k - 1.0;
    Ok((T::lit(vb / d), T::lit(vg / d), T::lit(c / d)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasCorrected<T> {
    pub beta1: T,
    pub var: T,
}

/// `β̂₁ᴼ = b̂_IV - b̂₂ᴱ/γ̂` with a delta-method variance. The experimental and
/// observational inputs are independent; the within-`O` covariance of
/// `(b̂_IV, γ̂)` enters through `cov_b_iv_gamma`.
pub fn bias_corrected_obs<T: Scalar>(
    obs: &ObsSummary<T>,
    b2_e: T,
    var_b2_e: T,
    cfg: &EstimatorConfig<T>,
) -> Result<BiasCorrected<T>> {
    let g = obs.gamma;
    if !g.is_finite() || g.abs() <= cfg.weak_corr_tol {
        return Err(FusionError::WeakFirstStage(g.as_f64()));
    }
    let beta1 = obs.b_iv - b2_e / g;
    let g2 = g * g;
    // gradient w.r.t. (b_iv, γ, b2_e) = (1, b2_e/γ², -1/γ)
    let dg = b2_e / g2;
    let var = obs.var_b_iv
        + dg * dg * obs.var_gamma
        + T::lit(2.0) * dg * obs.cov_b_iv_gamma
        + var_b2_e / g2;
    Ok(BiasCorrected {
        beta1,
        var: var.max(T::zero()),
    })
}

/// Convenience wrapper taking the experimental fit directly.
pub fn bias_corrected_from_fit<T: Scalar>(
    obs: &ObsSummary<T>,
    exp: &OlsFit<T>,
    cfg: &EstimatorConfig<T>,
) -> Result<BiasCorrected<T>> {
    bias_corrected_obs(obs, exp.b2, exp.var_b2(), cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> EstimatorConfig<f64> {
        EstimatorConfig::default()
    }

    #[test]
    fn self_instrument_identity() {
        let x = vec![0.3, -1.2, 2.0, 0.7, -0.4];
        let b = Block::from_columns(x.clone(), x.clone(), x);
        assert!((incorrect_iv(&b, &cfg()).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn uncorrelated_instrument_is_weak() {
        let x = vec![1.0, -1.0, 1.0, -1.0];
        let z = vec![1.0, 1.0, -1.0, -1.0];
        let b = Block::from_columns(vec![0.0; 4], x, z);
        assert!(matches!(
            incorrect_iv(&b, &cfg()),
            Err(FusionError::WeakFirstStage(_))
        ));
    }

    #[test]
    fn first_stage_exact_and_degenerate() {
        let z = vec![0.5, -1.0, 2.0, 0.1, -0.3];
        let x: Vec<f64> = z.iter().map(|v| 0.95 * v).collect();
        let fs = first_stage(&Block::from_columns(vec![0.0; 5], x, z)).unwrap();
        assert!((fs.gamma - 0.95).abs() < 1e-14);
        assert!(fs.var_gamma.abs() < 1e-28);
        let flat = Block::from_columns(vec![0.0; 3], vec![1.0, 2.0, 3.0], vec![4.0; 3]);
        assert_eq!(first_stage(&flat).unwrap_err(), FusionError::DegenerateZ);
    }

    fn summary(b_iv: f64, gamma: f64) -> ObsSummary<f64> {
        ObsSummary {
            b_iv,
            gamma,
            var_b_iv: 0.0,
            var_gamma: 0.0,
            cov_b_iv_gamma: 0.0,
            n: 1000,
        }
    }

    #[test]
    fn no_violation_no_correction() {
        let bc = bias_corrected_obs(&summary(0.42, 0.9), 0.0, 0.01, &cfg()).unwrap();
        assert_eq!(bc.beta1, 0.42);
    }

    #[test]
    fn plug_in_of_bias_formula() {
        // b_IV = 0.1 + 0.5/0.95
        let b_iv = 0.1 + 0.5 / 0.95;
        let bc = bias_corrected_obs(&summary(b_iv, 0.95), 0.5, 0.0, &cfg()).unwrap();
        assert!((bc.beta1 - 0.1).abs() < 1e-14);
        let rounded = bias_corrected_obs(&summary(0.626, 0.95), 0.5, 0.0, &cfg()).unwrap();
        assert!((rounded.beta1 - 0.1).abs() < 1e-3);
    }

    #[test]
    fn fourth_order_sums_match_direct_residuals() {
        let b = Block::from_columns(
            vec![0.3, 1.1, -0.7, 2.2, 0.0, -1.3],
            vec![1.0, 0.4, -0.2, 1.5, -0.9, -0.6],
            vec![0.8, 0.1, -0.5, 1.1, -1.2, 0.2],
        );
        let m = ObsMoments::from_block(&b);
        let (b1, b2) = (0.37, -0.81);
        let cp = &m.cp;
        let direct: f64 = (0..b.len())
            .map(|i| {
                let (y, x, z) = (b.y[i] - cp.mean_y, b.x[i] - cp.mean_x, b.z[i] - cp.mean_z);
                let e = y - b1 * x - b2 * z;
                e * e * z * z
            })
            .sum();
        assert!((m.weighted_residual_square(b1, b2) - direct).abs() < 1e-12);
    }

    #[test]
    fn influence_and_bootstrap_roughly_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut b = Block::with_capacity(4000);
        for _ in 0..4000 {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            let v: f64 = rng.sample(rand_distr::StandardNormal);
            let u: f64 = rng.sample(rand_distr::StandardNormal);
            let x = 0.8 * z + 0.5 * v;
            b.push(0.2 * x + 0.3 * z + u + 0.3 * v, x, z);
        }
        let m = ObsMoments::from_block(&b);
        let inf = summarize_obs(&b, &m, &cfg()).unwrap();
        let boot_cfg = EstimatorConfig {
            obs_variance: ObsVariance::Bootstrap {
                draws: 400,
                seed: 11,
            },
            ..cfg()
        };
        let boot = summarize_obs(&b, &m, &boot_cfg).unwrap();
        assert!((inf.var_b_iv / boot.var_b_iv - 1.0).abs() < 0.25);
        assert!((inf.var_gamma / boot.var_gamma - 1.0).abs() < 0.25);
    }
}
