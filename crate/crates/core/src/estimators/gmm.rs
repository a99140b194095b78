//! Linear GMM stacking two experimental moments and one observational moment.
//!
//! With `ε = y - β₁x - b₂z` the moments are `E[εx | E]`, `E[εz | E]` and
//! `E[εz | O]`. All sums are over centered data, so the sample moment vector
//! is `m0 - Γθ` and the estimator has the closed form
//! `θ̂ = (Γ'WΓ)⁻¹ Γ'W m0`.

use crate::data::{Block, CrossProducts};
use crate::error::{FusionError, Result};
use crate::estimators::observational::ObsMoments;
use crate::estimators::ols::OlsFit;
use crate::linalg::{
    cholesky3_psd, gmm_normal_equations, inv2, is_well_conditioned, mul2, quad_form32, Mat2, Mat3,
    Mat32, Vec2,
};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Weighting<T> {
    /// `W = Ω⁻¹`, `Ω = diag(X_E'X_E, Z_E'Z_E, Z_O'Z_O)`; efficient under
    /// homoscedastic, serially uncorrelated residuals.
    Optimal,
    /// Identity first step, then the inverse of the residual-weighted moment
    /// covariance (block diagonal across groups).
    TwoStepFeasible,
    Custom(Mat3<T>),
}

/// Jacobian, moment targets and the homoscedastic weighting target.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentSystem<T> {
    /// Rows `[X_E'X_E, X_E'Z_E]`, `[Z_E'X_E, Z_E'Z_E]`, `[Z_O'X_O, Z_O'Z_O]`.
    pub gamma_mat: Mat32<T>,
    /// `[X_E'Y_E, Z_E'Y_E, Z_O'Y_O]`.
    pub m0: [T; 3],
    /// `diag(X_E'X_E, Z_E'Z_E, Z_O'Z_O)`.
    pub omega: Mat3<T>,
    pub sigma2_hat: T,
    pub has_obs: bool,
}

impl<T: Scalar> MomentSystem<T> {
    pub fn build(exp: &CrossProducts<T>, sigma2_hat: T, obs: Option<&CrossProducts<T>>) -> Self {
        let zero = T::zero();
        let (o_zx, o_zz, o_zy) = match obs {
            Some(o) if o.n > 0 => (o.sxz, o.szz, o.szy),
            _ => (zero, zero, zero),
        };
        let has_obs = obs.map(|o| o.n > 0).unwrap_or(false);
        Self {
            gamma_mat: [[exp.sxx, exp.sxz], [exp.sxz, exp.szz], [o_zx, o_zz]],
            m0: [exp.sxy, exp.szy, o_zy],
            omega: [[exp.sxx, zero, zero], [zero, exp.szz, zero], [zero, zero, o_zz]],
            sigma2_hat,
            has_obs,
        }
    }

    /// Summed sample moments at `θ`.
    pub fn moments(&self, theta: &Vec2<T>) -> [T; 3] {
        let g = &self.gamma_mat;
        [
            self.m0[0] - g[0][0] * theta[0] - g[0][1] * theta[1],
            self.m0[1] - g[1][0] * theta[0] - g[1][1] * theta[1],
            self.m0[2] - g[2][0] * theta[0] - g[2][1] * theta[1],
        ]
    }

    /// `ḡ(θ)' W ḡ(θ)`.
    pub fn objective(&self, theta: &Vec2<T>, w: &Mat3<T>) -> T {
        let g = self.moments(theta);
        let mut acc = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                acc = acc + g[i] * w[i][j] * g[j];
            }
        }
        acc
    }

    pub fn optimal_weight(&self) -> Result<Mat3<T>> {
        let zero = T::zero();
        let mut w = [[zero; 3]; 3];
        for i in 0..3 {
            let d = self.omega[i][i];
            if i == 2 && !self.has_obs {
                continue;
            }
            if !(d > zero) {
                return Err(FusionError::SingularWeighting(format!(
                    "diagonal entry {i} of Ω is not positive"
                )));
            }
            w[i][i] = T::one() / d;
        }
        Ok(w)
    }

    /// Homoscedastic covariance of the summed moments, `σ̂²·blockdiag(M_E'M_E, Z_O'Z_O)`.
    pub fn homoscedastic_moment_cov(&self) -> Mat3<T> {
        let s = self.sigma2_hat;
        let g = &self.gamma_mat;
        let zero = T::zero();
        [
            [s * g[0][0], s * g[0][1], zero],
            [s * g[1][0], s * g[1][1], zero],
            [zero, zero, s * self.omega[2][2]],
        ]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GmmFit<T> {
    pub beta1: T,
    pub b2: T,
    pub cov: Mat2<T>,
    pub weight: Mat3<T>,
    /// Hansen-type overidentification statistic (one degree of freedom when
    /// the observational moment is present).
    pub j_stat: T,
}

/// Closed-form minimiser of `ḡ'Wḡ`; also returns `(Γ'WΓ)⁻¹`.
pub fn solve_weighted<T: Scalar>(
    sys: &MomentSystem<T>,
    w: &Mat3<T>,
    singular_tol: T,
) -> Result<(Vec2<T>, Mat2<T>)> {
    let (lhs, rhs) = gmm_normal_equations(&sys.gamma_mat, w, &sys.m0);
    if !is_well_conditioned(&lhs, singular_tol) {
        return Err(FusionError::SingularWeighting(
            "Γ'WΓ is not invertible".into(),
        ));
    }
    let inv = inv2(&lhs).ok_or_else(|| FusionError::SingularWeighting("zero determinant".into()))?;
    let theta = [
        inv[0][0] * rhs[0] + inv[0][1] * rhs[1],
        inv[1][0] * rhs[0] + inv[1][1] * rhs[1],
    ];
    Ok((theta, inv))
}

fn sandwich<T: Scalar>(sys: &MomentSystem<T>, w: &Mat3<T>, bread: &Mat2<T>, meat: &Mat3<T>) -> Mat2<T> {
    let wsw = crate::linalg::mul3(&crate::linalg::mul3(w, meat), w);
    let filling = quad_form32(&sys.gamma_mat, &wsw);
    mul2(&mul2(bread, &filling), bread)
}

fn validate_custom<T: Scalar>(w: &Mat3<T>) -> Result<()> {
    let scale = (0..3).map(|i| w[i][i].abs()).fold(T::zero(), T::max);
    let tol = T::lit(1e-12) * scale.max(T::min_positive_value());
    if !w.iter().flatten().all(|v| v.is_finite()) || cholesky3_psd(w, tol).is_none() {
        return Err(FusionError::SingularWeighting(
            "custom weighting matrix must be symmetric positive semidefinite".into(),
        ));
    }
    Ok(())
}

/// Residual-weighted moment covariance, block diagonal across groups.
fn robust_moment_cov<T: Scalar>(
    exp: &Block<T>,
    exp_cp: &CrossProducts<T>,
    obs: Option<&ObsMoments<T>>,
    theta: &Vec2<T>,
) -> Mat3<T> {
    let zero = T::zero();
    let (mut a, mut b, mut c) = (zero, zero, zero);
    for i in 0..exp.len() {
        let x = exp.x[i] - exp_cp.mean_x;
        let z = exp.z[i] - exp_cp.mean_z;
        let y = exp.y[i] - exp_cp.mean_y;
        let e = y - theta[0] * x - theta[1] * z;
        let e2 = e * e;
        a = a + e2 * x * x;
        b = b + e2 * x * z;
        c = c + e2 * z * z;
    }
    let o = obs
        .filter(|m| m.n() > 0)
        .map(|m| m.weighted_residual_square(theta[0], theta[1]))
        .unwrap_or(zero);
    [[a, b, zero], [b, c, zero], [zero, zero, o]]
}

fn invert_block_diag<T: Scalar>(s: &Mat3<T>, has_obs: bool) -> Result<Mat3<T>> {
    let zero = T::zero();
    let e = [[s[0][0], s[0][1]], [s[1][0], s[1][1]]];
    let inv = inv2(&e).ok_or_else(|| {
        FusionError::SingularWeighting("experimental moment covariance is singular".into())
    })?;
    let o = if has_obs {
        if !(s[2][2] > zero) {
            return Err(FusionError::SingularWeighting(
                "observational moment variance is zero".into(),
            ));
        }
        T::one() / s[2][2]
    } else {
        zero
    };
    Ok([[inv[0][0], inv[0][1], zero], [inv[1][0], inv[1][1], zero], [zero, zero, o]])
}

fn j_statistic<T: Scalar>(sys: &MomentSystem<T>, theta: &Vec2<T>, s_inv: &Mat3<T>) -> T {
    sys.objective(theta, s_inv)
}

/// Fit the combined GMM given the experimental block, its OLS fit (for `σ̂²`)
/// and the observational moments (absent or empty → experiment only).
pub fn gmm_fit<T: Scalar>(
    exp: &Block<T>,
    exp_cp: &CrossProducts<T>,
    exp_fit: &OlsFit<T>,
    obs: Option<&ObsMoments<T>>,
    weighting: &Weighting<T>,
    singular_tol: T,
) -> Result<GmmFit<T>> {
    let sys = MomentSystem::build(exp_cp, exp_fit.sigma2, obs.map(|m| &m.cp));
    match weighting {
        Weighting::Optimal | Weighting::Custom(_) => {
            let w = match weighting {
                Weighting::Custom(w) => {
                    validate_custom(w)?;
                    *w
                }
                _ => sys.optimal_weight()?,
            };
            let (theta, bread) = solve_weighted(&sys, &w, singular_tol)?;
            let meat = sys.homoscedastic_moment_cov();
            let cov = sandwich(&sys, &w, &bread, &meat);
            let s_inv = invert_block_diag(&meat, sys.has_obs).unwrap_or([[T::zero(); 3]; 3]);
            Ok(GmmFit {
                beta1: theta[0],
                b2: theta[1],
                cov,
                weight: w,
                j_stat: j_statistic(&sys, &theta, &s_inv),
            })
        }
        Weighting::TwoStepFeasible => {
            let mut eye = [[T::zero(); 3]; 3];
            for (i, row) in eye.iter_mut().enumerate() {
                row[i] = if i == 2 && !sys.has_obs { T::zero() } else { T::one() };
            }
            let (first, _) = solve_weighted(&sys, &eye, singular_tol)?;
            let s = robust_moment_cov(exp, exp_cp, obs, &first);
            let w = invert_block_diag(&s, sys.has_obs)?;
            let (theta, bread) = solve_weighted(&sys, &w, singular_tol)?;
            Ok(GmmFit {
                beta1: theta[0],
                b2: theta[1],
                cov: bread,
                weight: w,
                j_stat: j_statistic(&sys, &theta, &w),
            })
        }
    }
}
