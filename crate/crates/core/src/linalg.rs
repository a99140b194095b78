//! Fixed-size dense helpers. Every system in this crate has two slopes and at
//! most three moments, so plain arrays beat pulling in a matrix library.

use crate::scalar::Scalar;

pub type Vec2<T> = [T; 2];
pub type Mat2<T> = [[T; 2]; 2];
pub type Mat3<T> = [[T; 3]; 3];
/// Three rows, two columns.
pub type Mat32<T> = [[T; 2]; 3];

pub fn det2<T: Scalar>(a: &Mat2<T>) -> T {
    a[0][0] * a[1][1] - a[0][1] * a[1][0]
}

pub fn inv2<T: Scalar>(a: &Mat2<T>) -> Option<Mat2<T>> {
    let d = det2(a);
    if d == T::zero() || !d.is_finite() {
        return None;
    }
    Some([[a[1][1] / d, -a[0][1] / d], [-a[1][0] / d, a[0][0] / d]])
}

pub fn mul2<T: Scalar>(a: &Mat2<T>, b: &Mat2<T>) -> Mat2<T> {
    let mut out = [[T::zero(); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

pub fn mul2v<T: Scalar>(a: &Mat2<T>, v: &Vec2<T>) -> Vec2<T> {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

/// Eigenvalues of a symmetric 2x2 matrix, largest first.
pub fn sym2_eigenvalues<T: Scalar>(a: &Mat2<T>) -> (T, T) {
    let half = T::lit(0.5);
    let mean = (a[0][0] + a[1][1]) * half;
    let diff = (a[0][0] - a[1][1]) * half;
    let off = (a[0][1] + a[1][0]) * half;
    let rad = diff.hypot(off);
    (mean + rad, mean - rad)
}

/// For a symmetric positive semidefinite matrix the singular values are the
/// eigenvalues; the matrix is treated as singular when the smaller one falls
/// below `rel_tol` times the larger one.
pub fn is_well_conditioned<T: Scalar>(a: &Mat2<T>, rel_tol: T) -> bool {
    let (hi, lo) = sym2_eigenvalues(a);
    hi > T::zero() && lo.abs() > rel_tol * hi && lo.is_finite()
}

/// `Γ' W Γ` and `Γ' W m` for a 3-moment, 2-parameter linear system.
pub fn gmm_normal_equations<T: Scalar>(
    gamma: &Mat32<T>,
    w: &Mat3<T>,
    m: &[T; 3],
) -> (Mat2<T>, Vec2<T>) {
    // WΓ (3x2) and Wm (3)
    let mut wg = [[T::zero(); 2]; 3];
    let mut wm = [T::zero(); 3];
    for i in 0..3 {
        for j in 0..2 {
            wg[i][j] = (0..3).map(|k| w[i][k] * gamma[k][j]).sum();
        }
        wm[i] = (0..3).map(|k| w[i][k] * m[k]).sum();
    }
    let mut lhs = [[T::zero(); 2]; 2];
    let mut rhs = [T::zero(); 2];
    for a in 0..2 {
        for b in 0..2 {
            lhs[a][b] = (0..3).map(|k| gamma[k][a] * wg[k][b]).sum();
        }
        rhs[a] = (0..3).map(|k| gamma[k][a] * wm[k]).sum();
    }
    (lhs, rhs)
}

/// `Γ' A Γ` for a 3x3 `A`.
pub fn quad_form32<T: Scalar>(gamma: &Mat32<T>, a: &Mat3<T>) -> Mat2<T> {
    let (lhs, _) = gmm_normal_equations(gamma, a, &[T::zero(); 3]);
    lhs
}

pub fn mul3<T: Scalar>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn det3<T: Scalar>(a: &Mat3<T>) -> T {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Adjugate inverse; `None` when the determinant vanishes.
pub fn inv3<T: Scalar>(a: &Mat3<T>) -> Option<Mat3<T>> {
    let d = det3(a);
    if d == T::zero() || !d.is_finite() {
        return None;
    }
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            out[i][j] = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / d;
        }
    }
    Some(out)
}

/// Lower Cholesky factor of a symmetric positive semidefinite 3x3 matrix.
///
/// Zero pivots are accepted (the corresponding column of the factor is zero)
/// provided the rest of that column is also zero within `tol`; otherwise the
/// matrix is indefinite and `None` is returned.
pub fn cholesky3_psd<T: Scalar>(a: &Mat3<T>, tol: T) -> Option<Mat3<T>> {
    for i in 0..3 {
        for j in 0..3 {
            if (a[i][j] - a[j][i]).abs() > tol {
                return None;
            }
        }
    }
    let mut l = [[T::zero(); 3]; 3];
    for j in 0..3 {
        let mut d = a[j][j];
        for k in 0..j {
            d = d - l[j][k] * l[j][k];
        }
        if d < -tol {
            return None;
        }
        if d <= tol {
            for i in (j + 1)..3 {
                let mut s = a[i][j];
                for k in 0..j {
                    s = s - l[i][k] * l[j][k];
                }
                if s.abs() > tol.sqrt() {
                    return None;
                }
            }
            continue;
        }
        let ljj = d.sqrt();
        l[j][j] = ljj;
        for i in (j + 1)..3 {
            let mut s = a[i][j];
            for k in 0..j {
                s = s - l[i][k] * l[j][k];
            }
            l[i][j] = s / ljj;
        }
    }
    Some(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_of_identity_like() {
        let a = [[4.0f64, 1.0], [1.0, 3.0]];
        let inv = inv2(&a).unwrap();
        let p = mul2(&a, &inv);
        assert!((p[0][0] - 1.0).abs() < 1e-15 && p[0][1].abs() < 1e-15);
        assert!(inv2(&[[1.0, 2.0], [2.0, 4.0]]).is_none());
    }

    #[test]
    fn inverse_3x3() {
        let a = [[4.0f64, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 2.0]];
        let p = mul3(&a, &inv3(&a).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((p[i][j] - e).abs() < 1e-14);
            }
        }
        assert!(inv3(&[[1.0f64, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 1.0]]).is_none());
    }

    #[test]
    fn eigenvalues_and_conditioning() {
        let (hi, lo) = sym2_eigenvalues(&[[2.0f64, 1.0], [1.0, 2.0]]);
        assert!((hi - 3.0).abs() < 1e-14 && (lo - 1.0).abs() < 1e-14);
        assert!(!is_well_conditioned(&[[1.0, 1.0], [1.0, 1.0]], 1e-10));
        assert!(is_well_conditioned(&[[1.0, 0.0], [0.0, 1e-9]], 1e-10));
    }

    #[test]
    fn cholesky_rebuilds_matrix() {
        let s: f64 = 0.3;
        let a = [[1.0, 0.4, 0.0], [0.4, 1.0, 0.4 * s], [0.0, 0.4 * s, s * s]];
        let l = cholesky3_psd(&a, 1e-12).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| l[i][k] * l[j][k]).sum();
                assert!((v - a[i][j]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn cholesky_semidefinite_and_indefinite() {
        // V identically zero
        let a = [[1.0, 0.4, 0.0], [0.4, 1.0, 0.0], [0.0, 0.0, 0.0]];
        assert!(cholesky3_psd(&a, 1e-12).is_some());
        let bad = [[1.0, 0.9, 0.0], [0.9, 1.0, 0.9], [0.0, 0.9, 1.0]];
        assert!(cholesky3_psd(&bad, 1e-12).is_none());
    }
}
