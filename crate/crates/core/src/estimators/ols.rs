//! Two-regressor least squares on centered data.

use crate::data::{Block, CrossProducts};
use crate::error::{FusionError, Result};
use crate::linalg::{inv2, is_well_conditioned, Mat2};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OlsFit<T> {
    pub beta1: T,
    pub b2: T,
    /// `σ̂² (M'M)⁻¹` on the centered design.
    pub cov: Mat2<T>,
    /// `RSS / (n - 2)`.
    pub sigma2: T,
    pub rss: T,
    pub n: usize,
    pub mean_y: T,
    pub mean_x: T,
    pub mean_z: T,
}

impl<T: Scalar> OlsFit<T> {
    pub fn var_beta1(&self) -> T {
        self.cov[0][0]
    }

    pub fn var_b2(&self) -> T {
        self.cov[1][1]
    }

    /// Prediction including the intercept implied by centering.
    pub fn predict(&self, x: T, z: T) -> T {
        self.mean_y + self.beta1 * (x - self.mean_x) + self.b2 * (z - self.mean_z)
    }
}

/// Centered cross-product matrix of the two regressors.
pub fn design_gram<T: Scalar>(cp: &CrossProducts<T>) -> Mat2<T> {
    [[cp.sxx, cp.sxz], [cp.sxz, cp.szz]]
}

/// Regress `y` on `(x, z)` with an intercept absorbed by centering.
pub fn ols2<T: Scalar>(b: &Block<T>, singular_tol: T) -> Result<OlsFit<T>> {
    ols2_from_cross_products(&b.cross_products(), singular_tol)
}

pub fn ols2_from_cross_products<T: Scalar>(
    cp: &CrossProducts<T>,
    singular_tol: T,
) -> Result<OlsFit<T>> {
    if cp.n < 3 {
        return Err(FusionError::TooFewObservations { need: 3, have: cp.n });
    }
    let gram = design_gram(cp);
    if !is_well_conditioned(&gram, singular_tol) {
        return Err(FusionError::SingularDesign(
            "centered (X, Z) cross-product matrix is rank deficient".into(),
        ));
    }
    let inv = inv2(&gram).ok_or_else(|| FusionError::SingularDesign("zero determinant".into()))?;
    let beta1 = inv[0][0] * cp.sxy + inv[0][1] * cp.szy;
    let b2 = inv[1][0] * cp.sxy + inv[1][1] * cp.szy;
    let rss = (cp.syy - beta1 * cp.sxy - b2 * cp.szy).max(T::zero());
    let sigma2 = rss / T::from_count(cp.n - 2);
    let cov = [
        [sigma2 * inv[0][0], sigma2 * inv[0][1]],
        [sigma2 * inv[1][0], sigma2 * inv[1][1]],
    ];
    Ok(OlsFit {
        beta1,
        b2,
        cov,
        sigma2,
        rss,
        n: cp.n,
        mean_y: cp.mean_y,
        mean_x: cp.mean_x,
        mean_z: cp.mean_z,
    })
}
