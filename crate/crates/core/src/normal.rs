//! Standard normal density, distribution and related tail quantities.
//!
//! Evaluated in `f64` internally and converted back, since the error-function
//! routines are only available in double precision.

use statrs::distribution::{ContinuousCDF, Normal};


use crate::scalar::Scalar;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn ln_pdf<T: Scalar>(x: T) -> T {
    let x = x.as_f64();
    T::lit(-0.5 * x * x - LN_SQRT_2PI)
}

pub fn pdf<T: Scalar>(x: T) -> T {
    ln_pdf(x).exp()
}

pub fn cdf<T: Scalar>(x: T) -> T {
    T::lit(cdf_f64(x.as_f64()))
}

fn cdf_f64(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Φ(x)`, finite for every finite `x`.
pub fn ln_cdf<T: Scalar>(x: T) -> T {
    T::lit(ln_cdf_f64(x.as_f64()))
}

fn ln_cdf_f64(x: f64) -> f64 {
    if x > 0.0 {
        // Φ(x) = 1 - Φ(-x)
        (-cdf_f64(-x)).ln_1p()
    } else if x > -37.0 {
        cdf_f64(x).ln()
    } else {
        // Mills-ratio asymptotic series; erfc underflows beyond this point.
        let r = 1.0 / (x * x);
        let series = 1.0 - r + 3.0 * r * r - 15.0 * r * r * r + 105.0 * r * r * r * r;
        -0.5 * x * x - LN_SQRT_2PI - (-x).ln() + series.ln()
    }
}

/// Inverse Mills ratio `φ(x) / Φ(x)`.
pub fn inv_mills<T: Scalar>(x: T) -> T {
    let xf = x.as_f64();
    T::lit((-0.5 * xf * xf - LN_SQRT_2PI - ln_cdf_f64(xf)).exp())
}

pub fn quantile<T: Scalar>(p: T) -> T {
    let n = Normal::standard();
    T::lit(n.inverse_cdf(p.as_f64()))
}
