//! Experimental least squares shrunk toward the observational restriction
//! `b_IV = β₁ + b₂/γ`.

use std::fmt;
use std::str::FromStr;

use crate::data::CrossProducts;
use crate::error::{FusionError, Result};
use crate::estimators::ols::design_gram;
use crate::linalg::{inv2, is_well_conditioned, mul2, Mat2};
use crate::scalar::Scalar;

/// Penalty strength; `Infinite` imposes the restriction exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Lambda<T> {
    Finite(T),
    Infinite,
}

impl<T: Scalar> Lambda<T> {
    pub fn validate(self) -> Result<Self> {
        match self {
            Lambda::Finite(l) if !(l >= T::zero()) || !l.is_finite() => Err(
                FusionError::InvalidHyperparameter(format!("lambda must be finite and >= 0, got {l}")),
            ),
            other => Ok(other),
        }
    }

    /// `+inf` for the constrained case.
    pub fn value(self) -> T {
        match self {
            Lambda::Finite(l) => l,
            Lambda::Infinite => T::infinity(),
        }
    }
}

impl<T: Scalar> fmt::Display for Lambda<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lambda::Finite(l) => write!(f, "{l}"),
            Lambda::Infinite => f.write_str("inf"),
        }
    }
}

impl<T: Scalar> FromStr for Lambda<T> {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinity") {
            return Ok(Lambda::Infinite);
        }
        t.parse::<T>()
            .map_err(|_| FusionError::InvalidHyperparameter(format!("cannot parse lambda `{s}`")))
            .and_then(|v| {
                if v.is_infinite() && v > T::zero() {
                    Ok(Lambda::Infinite)
                } else {
                    Lambda::Finite(v).validate()
                }
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizedFit<T> {
    pub beta1: T,
    pub b2: T,
    /// Sampling covariance of `(β̂₁, b̂₂)` from experimental noise, per unit `σ²`.
    pub exp_cov_unit: Mat2<T>,
}

impl<T: Scalar> RegularizedFit<T> {
    pub fn constraint_residual(&self, b_iv: T, gamma: T) -> T {
        b_iv - self.beta1 - self.b2 / gamma
    }
}

/// Minimise `Σ_E (y - β₁x - b₂z)² + λ (b_IV - β₁ - b₂/γ)²` on centered data.
pub fn regularized_regression<T: Scalar>(
    exp: &CrossProducts<T>,
    b_iv: T,
    gamma: T,
    lambda: Lambda<T>,
    singular_tol: T,
) -> Result<RegularizedFit<T>> {
    let lambda = lambda.validate()?;
    if gamma == T::zero() || !gamma.is_finite() {
        return Err(FusionError::WeakFirstStage(gamma.as_f64()));
    }
    if exp.n < 3 {
        return Err(FusionError::TooFewObservations { need: 3, have: exp.n });
    }
    let inv_g = T::one() / gamma;
    match lambda {
        Lambda::Finite(l) => {
            let gram = design_gram(exp);
            let a = [T::one(), inv_g];
            let lhs = [
                [gram[0][0] + l * a[0] * a[0], gram[0][1] + l * a[0] * a[1]],
                [gram[1][0] + l * a[1] * a[0], gram[1][1] + l * a[1] * a[1]],
            ];
            if !is_well_conditioned(&lhs, singular_tol) {
                return Err(FusionError::SingularDesign(
                    "penalized normal equations are rank deficient".into(),
                ));
            }
            let inv = inv2(&lhs).ok_or_else(|| FusionError::SingularDesign("zero determinant".into()))?;
            let rhs = [exp.sxy + l * a[0] * b_iv, exp.szy + l * a[1] * b_iv];
            let beta1 = inv[0][0] * rhs[0] + inv[0][1] * rhs[1];
            let b2 = inv[1][0] * rhs[0] + inv[1][1] * rhs[1];
            let exp_cov_unit = mul2(&mul2(&inv, &gram), &inv);
            Ok(RegularizedFit {
                beta1,
                b2,
                exp_cov_unit,
            })
        }
        Lambda::Infinite => {
            // substitute β₁ = b_IV - b₂/γ; regress (y - b_IV x) on d = z - x/γ
            let sdd = exp.szz - T::lit(2.0) * inv_g * exp.sxz + inv_g * inv_g * exp.sxx;
            let scale = exp.szz + inv_g * inv_g * exp.sxx;
            if !(sdd > singular_tol * scale) {
                return Err(FusionError::SingularDesign(
                    "constrained design has no variation".into(),
                ));
            }
            let sdy = exp.szy - inv_g * exp.sxy - b_iv * (exp.sxz - inv_g * exp.sxx);
            let b2 = sdy / sdd;
            let beta1 = b_iv - b2 * inv_g;
            let v = T::one() / sdd;
            let exp_cov_unit = [[v * inv_g * inv_g, -v * inv_g], [-v * inv_g, v]];
            Ok(RegularizedFit {
                beta1,
                b2,
                exp_cov_unit,
            })
        }
    }
}
