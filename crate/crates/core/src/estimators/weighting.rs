//! Inverse-variance combination of two uncorrelated unbiased estimates.

use crate::error::{FusionError, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedCombination<T> {
    pub beta1: T,
    pub var: T,
    pub w_o: T,
    pub w_e: T,
}

/// `w_O = Var_E / (Var_E + Var_O)`, `w_E = 1 - w_O`.
///
/// An infinite `var_o` is accepted and yields the experimental estimate.
pub fn weighted_combine<T: Scalar>(
    beta1_e: T,
    var_e: T,
    beta1_o: T,
    var_o: T,
) -> Result<WeightedCombination<T>> {
    if !(var_e > T::zero()) || var_e.is_infinite() {
        return Err(FusionError::NonpositiveVariance(format!("Var_E = {var_e}")));
    }
    if !(var_o > T::zero()) {
        return Err(FusionError::NonpositiveVariance(format!("Var_O = {var_o}")));
    }
    if var_o.is_infinite() {
        return Ok(WeightedCombination {
            beta1: beta1_e,
            var: var_e,
            w_o: T::zero(),
            w_e: T::one(),
        });
    }
    let total = var_e + var_o;
    let w_o = var_e / total;
    let w_e = var_o / total;
    Ok(WeightedCombination {
        beta1: w_o * beta1_o + w_e * beta1_e,
        var: w_o * w_o * var_o + w_e * w_e * var_e,
        w_o,
        w_e,
    })
}

/// Combination at a fixed observational weight (used by cross-validation).
pub fn fixed_weight<T: Scalar>(beta1_e: T, var_e: T, beta1_o: T, var_o: T, w_o: T) -> WeightedCombination<T> {
    let w_e = T::one() - w_o;
    let var_o_term = if w_o == T::zero() { T::zero() } else { w_o * w_o * var_o };
    WeightedCombination {
        beta1: w_o * beta1_o + w_e * beta1_e,
        var: var_o_term + w_e * w_e * var_e,
        w_o,
        w_e,
    }
}
