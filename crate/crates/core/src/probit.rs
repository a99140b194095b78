//! Binary outcomes: `Y = 1{β₁X + β₂Z + U > 0}` with `(U, V) | Z` bivariate
//! normal, `U | Z ~ N(ρ_zu Z, 1)` and `Corr(U, V) = ρ_uv`.
//!
//! The experiment identifies `(β₁, b₂)` by a probit without intercept. The
//! observational sample identifies `γ, σ_v` from the first stage and the two
//! reduced-form slopes
//!
//! ```text
//! C₁ = (β₁ + ρ_uv/σ_v) / √(1 - ρ_uv²)
//! C₂ = (b₂ - ρ_uv γ/σ_v) / √(1 - ρ_uv²)
//! ```
//!
//! which the combined estimator imposes on the experimental likelihood,
//! either exactly or through a quadratic penalty.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::data::{split, Block, EstimateReport, FusedDataset, Group, Method, UnitRecord};
use crate::error::{FusionError, Result};
use crate::linalg::{inv2, inv3, Mat2, Vec2};
use crate::normal;
use crate::scalar::Scalar;
use crate::simulation::replication_rng;

const MAX_NEWTON: usize = 100;
const RHO_BOUND: f64 = 0.999;
const RHO_GRID: usize = 199;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbitParams<T> {
    pub beta1: T,
    pub b2: T,
    pub rho_uv: T,
    pub gamma: T,
    pub sigma_v: T,
}

impl<T: Scalar> ProbitParams<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_uv.abs() < T::one()) {
            return Err(FusionError::InvalidHyperparameter(format!("|rho_uv| = {} must be < 1", self.rho_uv)));
        }
        if !(self.sigma_v > T::zero()) {
            return Err(FusionError::InvalidHyperparameter(format!("sigma_v = {} must be > 0", self.sigma_v)));
        }
        Ok(())
    }

    pub fn c1(&self) -> T {
        constraint_c1(self.beta1, self.rho_uv, self.sigma_v)
    }

    pub fn c2(&self) -> T {
        constraint_c2(self.b2, self.rho_uv, self.gamma, self.sigma_v)
    }
}

pub fn constraint_c1<T: Scalar>(beta1: T, rho: T, sigma_v: T) -> T {
    (beta1 + rho / sigma_v) / (T::one() - rho * rho).sqrt()
}

pub fn constraint_c2<T: Scalar>(b2: T, rho: T, gamma: T, sigma_v: T) -> T {
    (b2 - rho * gamma / sigma_v) / (T::one() - rho * rho).sqrt()
}

fn check_binary<T: Scalar>(b: &Block<T>) -> Result<()> {
    match b.y.iter().position(|y| *y != T::zero() && *y != T::one()) {
        Some(i) => Err(FusionError::NonBinaryOutcome(i)),
        None => Ok(()),
    }
}

/// Value, gradient and negative Hessian of a no-intercept probit
/// log-likelihood in `(β₁, b₂)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLik<T> {
    pub value: T,
    pub grad: Vec2<T>,
    pub neg_hess: Mat2<T>,
}

fn loglik_value<T: Scalar>(beta1: T, b2: T, b: &Block<T>) -> T {
    let mut ll = T::zero();
    for i in 0..b.len() {
        let q = if b.y[i] == T::one() { T::one() } else { -T::one() };
        ll = ll + normal::ln_cdf(q * (beta1 * b.x[i] + b2 * b.z[i]));
    }
    ll
}

fn loglik_derivs<T: Scalar>(beta1: T, b2: T, b: &Block<T>) -> LogLik<T> {
    let zero = T::zero();
    let mut out = LogLik {
        value: zero,
        grad: [zero; 2],
        neg_hess: [[zero; 2]; 2],
    };
    for i in 0..b.len() {
        let q = if b.y[i] == T::one() { T::one() } else { -T::one() };
        let (x, z) = (b.x[i], b.z[i]);
        let m = q * (beta1 * x + b2 * z);
        let lam = normal::inv_mills(m);
        out.value = out.value + normal::ln_cdf(m);
        out.grad[0] = out.grad[0] + q * lam * x;
        out.grad[1] = out.grad[1] + q * lam * z;
        let w = lam * (m + lam);
        out.neg_hess[0][0] = out.neg_hess[0][0] + w * x * x;
        out.neg_hess[0][1] = out.neg_hess[0][1] + w * x * z;
        out.neg_hess[1][1] = out.neg_hess[1][1] + w * z * z;
    }
    out.neg_hess[1][0] = out.neg_hess[0][1];
    out
}

/// `Σ ln Φ(±(β₁X + b₂Z))` over a binary block.
pub fn probit_loglik<T: Scalar>(beta1: T, b2: T, b: &Block<T>) -> Result<T> {
    check_binary(b)?;
    Ok(loglik_value(beta1, b2, b))
}

pub fn probit_loglik_derivs<T: Scalar>(beta1: T, b2: T, b: &Block<T>) -> Result<LogLik<T>> {
    check_binary(b)?;
    Ok(loglik_derivs(beta1, b2, b))
}

/// Experimental log-likelihood at `params`; only `(β₁, b₂)` enter.
pub fn probit_loglik_e<T: Scalar>(params: &ProbitParams<T>, exp: &Block<T>) -> Result<T> {
    params.validate()?;
    probit_loglik(params.beta1, params.b2, exp)
}

/// Maximizes a concave objective in two parameters by damped Newton steps.
/// `f` returns value, gradient and negative Hessian.
fn newton2<T: Scalar>(start: Vec2<T>, f: impl Fn(Vec2<T>) -> LogLik<T>) -> Result<(Vec2<T>, LogLik<T>, usize)> {
    let mut theta = start;
    let mut cur = f(theta);
    let half = T::lit(0.5);
    for it in 1..=MAX_NEWTON {
        let inv = inv2(&cur.neg_hess).ok_or_else(|| FusionError::SingularDesign("probit information".into()))?;
        let step = [
            inv[0][0] * cur.grad[0] + inv[0][1] * cur.grad[1],
            inv[1][0] * cur.grad[0] + inv[1][1] * cur.grad[1],
        ];
        let decrement = step[0] * cur.grad[0] + step[1] * cur.grad[1];
        if !decrement.is_finite() {
            break;
        }
        let small_step = step[0].abs().max(step[1].abs()) <= T::lit(1e-10) * (T::one() + theta[0].abs().max(theta[1].abs()));
        if decrement < T::lit(1e-12) || small_step {
            return Ok((theta, cur, it));
        }
        // summation rounding in the objective; gains below it are invisible
        let slack = T::lit(1e-12) * (T::one() + cur.value.abs());
        let mut t = T::one();
        loop {
            let cand = [theta[0] + t * step[0], theta[1] + t * step[1]];
            let next = f(cand);
            if next.value >= cur.value - slack {
                theta = cand;
                cur = next;
                break;
            }
            t = t * half;
            if t < T::lit(1e-12) {
                // no ascent possible along the Newton direction: at optimum
                return Ok((theta, cur, it));
            }
        }
    }
    Err(FusionError::NonConvergence {
        iterations: MAX_NEWTON,
        best: cur.value.as_f64(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbitFit<T> {
    pub beta1: T,
    pub b2: T,
    /// Inverse observed information.
    pub cov: Mat2<T>,
    pub loglik: T,
    pub iterations: usize,
}

/// No-intercept probit MLE of `Y` on `(X, Z)`.
pub fn probit_mle<T: Scalar>(b: &Block<T>) -> Result<ProbitFit<T>> {
    check_binary(b)?;
    if b.len() < 3 {
        return Err(FusionError::TooFewObservations { need: 3, have: b.len() });
    }
    let (theta, ll, iterations) = newton2([T::zero(); 2], |t| loglik_derivs(t[0], t[1], b))?;
    // every unit on the correct side: the likelihood has no finite maximum
    let separated = (0..b.len()).all(|i| {
        let q = if b.y[i] == T::one() { T::one() } else { -T::one() };
        q * (theta[0] * b.x[i] + theta[1] * b.z[i]) > T::zero()
    });
    if separated {
        return Err(FusionError::NonConvergence {
            iterations,
            best: ll.value.as_f64(),
        });
    }
    let cov = inv2(&ll.neg_hess).ok_or_else(|| FusionError::SingularDesign("probit information".into()))?;
    Ok(ProbitFit {
        beta1: theta[0],
        b2: theta[1],
        cov,
        loglik: ll.value,
        iterations,
    })
}

pub fn probit_experiment_only<T: Scalar>(exp: &Block<T>) -> Result<EstimateReport<T>> {
    let f = probit_mle(exp)?;
    Ok(EstimateReport::new(Method::ProbitExperimentOnly, f.beta1, Some(f.b2), f.cov[0][0])
        .with_diag("loglik_e", f.loglik)
        .with_diag("var_b2", f.cov[1][1])
        .with_diag("n_e", T::from_count(exp.len())))
}

/// Observational estimates of the constraint inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObsConstraints<T> {
    pub c1: T,
    pub c2: T,
    pub gamma: T,
    pub sigma_v: T,
    /// Covariance of `(Ĉ₁, Ĉ₂, γ̂, σ̂_v)`; block diagonal because the
    /// first-stage and reduced-form likelihoods factorize.
    pub cov: [[T; 4]; 4],
    pub n: usize,
}

impl<T: Scalar> ObsConstraints<T> {
    fn values(&self) -> [T; 4] {
        [self.c1, self.c2, self.gamma, self.sigma_v]
    }

    fn with_values(&self, v: [T; 4]) -> Self {
        Self {
            c1: v[0],
            c2: v[1],
            gamma: v[2],
            sigma_v: v[3],
            ..*self
        }
    }

    /// `(β₁, b₂)` implied by the constraints at `ρ`.
    pub fn hard_path(&self, rho: T) -> (T, T) {
        let s = (T::one() - rho * rho).sqrt();
        (self.c1 * s - rho / self.sigma_v, self.c2 * s + rho * self.gamma / self.sigma_v)
    }
}

pub fn obs_constraints<T: Scalar>(obs: &Block<T>) -> Result<ObsConstraints<T>> {
    check_binary(obs)?;
    let n = obs.len();
    if n < 3 {
        return Err(FusionError::TooFewObservations { need: 3, have: n });
    }
    let cp = obs.cross_products();
    let szz_raw: T = obs.z.iter().map(|z| *z * *z).sum();
    if !(cp.szz > T::epsilon() * szz_raw.max(T::min_positive_value())) {
        return Err(FusionError::DegenerateZ);
    }
    let sxz: T = obs.x.iter().zip(&obs.z).map(|(x, z)| *x * *z).sum();
    let gamma = sxz / szz_raw;
    let nf = T::from_count(n);
    let s2: T = obs.x.iter().zip(&obs.z).map(|(x, z)| (*x - gamma * *z) * (*x - gamma * *z)).sum::<T>() / nf;
    if !(s2 > T::zero()) {
        return Err(FusionError::SingularDesign("X is an exact multiple of Z".into()));
    }
    let rf = probit_mle(obs)?;
    let zero = T::zero();
    let mut cov = [[zero; 4]; 4];
    cov[0][0] = rf.cov[0][0];
    cov[0][1] = rf.cov[0][1];
    cov[1][0] = rf.cov[1][0];
    cov[1][1] = rf.cov[1][1];
    cov[2][2] = s2 / szz_raw;
    cov[3][3] = s2 / (T::lit(2.0) * nf);
    Ok(ObsConstraints {
        c1: rf.beta1,
        c2: rf.b2,
        gamma,
        sigma_v: s2.sqrt(),
        cov,
        n,
    })
}

/// Result of a bounded one-dimensional maximization.
#[derive(Clone, Debug, PartialEq)]
pub struct RhoSearch<T> {
    pub rho: T,
    pub value: T,
    /// Best objective after each evaluation; non-decreasing.
    pub trace: Vec<T>,
}

/// Grid scan over `(-0.999, 0.999)` then golden-section refinement around the
/// best grid point.
fn maximize_rho<T: Scalar>(mut f: impl FnMut(T) -> Result<T>) -> Result<RhoSearch<T>> {
    let lo = T::lit(-RHO_BOUND);
    let hi = T::lit(RHO_BOUND);
    let mut trace = Vec::new();
    let mut best = (T::zero(), T::neg_infinity());
    let record = |rho: T, v: T, best: &mut (T, T), trace: &mut Vec<T>| {
        if v > best.1 {
            *best = (rho, v);
        }
        trace.push(best.1);
    };
    let step = (hi - lo) / T::from_count(RHO_GRID - 1);
    let mut best_k = 0;
    for k in 0..RHO_GRID {
        let rho = lo + step * T::from_count(k);
        let v = f(rho)?;
        let before = best.1;
        record(rho, v, &mut best, &mut trace);
        if best.1 > before {
            best_k = k;
        }
    }
    let mut a = lo + step * T::from_count(best_k.saturating_sub(1));
    let mut b = (lo + step * T::from_count(best_k + 1)).min(hi);
    let ratio = T::lit((5f64.sqrt() - 1.0) / 2.0);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = f(c)?;
    record(c, fc, &mut best, &mut trace);
    let mut fd = f(d)?;
    record(d, fd, &mut best, &mut trace);
    let tol = T::lit(1e-10);
    let mut iters = 0;
    while b - a > tol && iters < 200 {
        iters += 1;
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c)?;
            record(c, fc, &mut best, &mut trace);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d)?;
            record(d, fd, &mut best, &mut trace);
        }
    }
    if !best.1.is_finite() {
        return Err(FusionError::NonConvergence {
            iterations: trace.len(),
            best: best.1.as_f64(),
        });
    }
    Ok(RhoSearch {
        rho: best.0,
        value: best.1,
        trace,
    })
}

/// How the constraints enter the experimental likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyMode {
    /// Exact equality; `(β₁, b₂)` are eliminated and only `ρ_uv` is searched.
    Hard,
    /// `-½ rᵀS⁻¹r` on the constraint residuals `r`, with `S` their estimated
    /// covariance.
    Quadratic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CombinedProbitFit<T> {
    pub beta1: T,
    pub b2: T,
    pub rho_uv: T,
    pub var_beta1: T,
    pub objective: T,
    pub search: RhoSearch<T>,
    pub constraints: Option<ObsConstraints<T>>,
    pub mode: PenaltyMode,
}

fn hard_search<T: Scalar>(exp: &Block<T>, c: &ObsConstraints<T>) -> Result<RhoSearch<T>> {
    maximize_rho(|rho| {
        let (b1, b2) = c.hard_path(rho);
        Ok(loglik_value(b1, b2, exp))
    })
}

fn fit_hard<T: Scalar>(exp: &Block<T>, c: &ObsConstraints<T>, exp_var: T) -> Result<CombinedProbitFit<T>> {
    let search = hard_search(exp, c)?;
    let rho = search.rho;
    let (beta1, b2) = c.hard_path(rho);

    // curvature of the profile in ρ
    let h = T::lit(1e-4);
    let profile = |r: T| {
        let (a, b) = c.hard_path(r);
        loglik_value(a, b, exp)
    };
    let lo = (rho - h).max(T::lit(-RHO_BOUND));
    let hi = (rho + h).min(T::lit(RHO_BOUND));
    let mid = (lo + hi) / T::lit(2.0);
    let hh = (hi - lo) / T::lit(2.0);
    let curv = (profile(hi) - T::lit(2.0) * profile(mid) + profile(lo)) / (hh * hh);
    let s = (T::one() - rho * rho).sqrt();
    let dbeta = -c.c1 * rho / s - T::one() / c.sigma_v;
    let interior = rho.abs() < T::lit(RHO_BOUND) - T::lit(1e-6);
    let var_e = if interior && curv < T::zero() {
        dbeta * dbeta / -curv
    } else {
        exp_var
    };

    // observational noise through the constraint inputs
    let base = c.values();
    let mut grad = [T::zero(); 4];
    for j in 0..4 {
        let sd = c.cov[j][j].sqrt();
        if !(sd > T::zero()) {
            continue;
        }
        let step = T::lit(1e-2) * sd;
        let mut up = base;
        let mut dn = base;
        up[j] = up[j] + step;
        dn[j] = dn[j] - step;
        let at = |v: [T; 4]| -> Result<T> {
            let cc = c.with_values(v);
            let r = hard_search(exp, &cc)?.rho;
            Ok(cc.hard_path(r).0)
        };
        grad[j] = (at(up)? - at(dn)?) / (T::lit(2.0) * step);
    }
    let mut var_o = T::zero();
    for i in 0..4 {
        for j in 0..4 {
            var_o = var_o + grad[i] * c.cov[i][j] * grad[j];
        }
    }
    Ok(CombinedProbitFit {
        beta1,
        b2,
        rho_uv: rho,
        var_beta1: (var_e + var_o).max(T::zero()),
        objective: search.value,
        search,
        constraints: Some(*c),
        mode: PenaltyMode::Hard,
    })
}

/// Inverse covariance of the residuals `(Ĉ₁ - C₁, Ĉ₂ - C₂)` including the
/// plug-in noise in `(γ̂, σ̂_v)`, linearized at `rho`.
fn residual_precision<T: Scalar>(c: &ObsConstraints<T>, rho: T) -> Result<Mat2<T>> {
    let s = (T::one() - rho * rho).sqrt();
    let sv = c.sigma_v;
    // d(C₁, C₂)/d(γ, σ_v)
    let j = [[T::zero(), -rho / (sv * sv * s)], [-rho / (sv * s), rho * c.gamma / (sv * sv * s)]];
    let mut cov = [[c.cov[0][0], c.cov[0][1]], [c.cov[1][0], c.cov[1][1]]];
    for a in 0..2 {
        for b in 0..2 {
            for k in 0..2 {
                cov[a][b] = cov[a][b] + j[a][k] * c.cov[2 + k][2 + k] * j[b][k];
            }
        }
    }
    inv2(&cov).ok_or_else(|| FusionError::SingularDesign("constraint covariance".into()))
}

fn penalized<T: Scalar>(exp: &Block<T>, c: &ObsConstraints<T>, p: &Mat2<T>, theta: Vec2<T>, rho: T) -> LogLik<T> {
    let s = (T::one() - rho * rho).sqrt();
    let mut l = loglik_derivs(theta[0], theta[1], exp);
    let r = [
        c.c1 - constraint_c1(theta[0], rho, c.sigma_v),
        c.c2 - constraint_c2(theta[1], rho, c.gamma, c.sigma_v),
    ];
    let pr = [p[0][0] * r[0] + p[0][1] * r[1], p[1][0] * r[0] + p[1][1] * r[1]];
    let half = T::lit(0.5);
    l.value = l.value - half * (r[0] * pr[0] + r[1] * pr[1]);
    l.grad[0] = l.grad[0] + pr[0] / s;
    l.grad[1] = l.grad[1] + pr[1] / s;
    let s2 = s * s;
    for a in 0..2 {
        for b in 0..2 {
            l.neg_hess[a][b] = l.neg_hess[a][b] + p[a][b] / s2;
        }
    }
    l
}

fn fit_quadratic<T: Scalar>(exp: &Block<T>, c: &ObsConstraints<T>) -> Result<CombinedProbitFit<T>> {
    // linearize the residual covariance at the exactly constrained solution
    let rho0 = hard_search(exp, c)?.rho;
    let p = residual_precision(c, rho0)?;
    let start = probit_mle(exp).map(|f| [f.beta1, f.b2]).unwrap_or([T::zero(); 2]);
    let inner = |rho: T| -> Result<(Vec2<T>, T)> {
        let (theta, l, _) = newton2(start, |t| penalized(exp, c, &p, t, rho))?;
        Ok((theta, l.value))
    };
    let search = maximize_rho(|rho| inner(rho).map(|r| r.1))?;
    let rho = search.rho;
    let (theta, value) = inner(rho)?;

    // observed information of the penalized objective in (β₁, b₂, ρ)
    let obj = |v: [T; 3]| penalized(exp, c, &p, [v[0], v[1]], v[2]).value;
    let at = [theta[0], theta[1], rho];
    let h = [T::lit(1e-4), T::lit(1e-4), T::lit(1e-4).min((T::lit(RHO_BOUND) - rho.abs()) / T::lit(2.0))];
    let mut neg_h = [[T::zero(); 3]; 3];
    for a in 0..3 {
        for b in 0..3 {
            let e = |da: T, db: T| {
                let mut v = at;
                v[a] = v[a] + da * h[a];
                v[b] = v[b] + db * h[b];
                obj(v)
            };
            let one = T::one();
            let d = (e(one, one) - e(one, -one) - e(-one, one) + e(-one, -one)) / (T::lit(4.0) * h[a] * h[b]);
            neg_h[a][b] = -d;
        }
    }
    let var = inv3(&neg_h).map(|m| m[0][0]).filter(|v| *v > T::zero()).ok_or_else(|| {
        FusionError::NonConvergence {
            iterations: search.trace.len(),
            best: value.as_f64(),
        }
    })?;
    Ok(CombinedProbitFit {
        beta1: theta[0],
        b2: theta[1],
        rho_uv: rho,
        var_beta1: var,
        objective: value,
        search,
        constraints: Some(*c),
        mode: PenaltyMode::Quadratic,
    })
}

/// Combined constrained MLE. With no observational units the quadratic mode
/// reduces to the experiment-only probit.
pub fn probit_combined_fit<T: Scalar>(
    exp: &Block<T>,
    obs: &Block<T>,
    mode: PenaltyMode,
) -> Result<CombinedProbitFit<T>> {
    check_binary(exp)?;
    let e = probit_mle(exp)?;
    if obs.is_empty() {
        return match mode {
            PenaltyMode::Hard => Err(FusionError::EmptyGroup(Group::O)),
            PenaltyMode::Quadratic => Ok(CombinedProbitFit {
                beta1: e.beta1,
                b2: e.b2,
                rho_uv: T::zero(),
                var_beta1: e.cov[0][0],
                objective: e.loglik,
                search: RhoSearch {
                    rho: T::zero(),
                    value: e.loglik,
                    trace: vec![e.loglik],
                },
                constraints: None,
                mode,
            }),
        };
    }
    let c = obs_constraints(obs)?;
    match mode {
        PenaltyMode::Hard => fit_hard(exp, &c, e.cov[0][0]),
        PenaltyMode::Quadratic => fit_quadratic(exp, &c),
    }
}

pub fn probit_combined<T: Scalar>(ds: &FusedDataset<T>, mode: PenaltyMode) -> Result<EstimateReport<T>> {
    let (exp, obs) = split(ds);
    let f = probit_combined_fit(&exp, &obs, mode)?;
    let mut r = EstimateReport::new(Method::ProbitCombined, f.beta1, Some(f.b2), f.var_beta1)
        .with_hyper("hard", T::from_count(usize::from(mode == PenaltyMode::Hard)))
        .with_diag("rho_uv_hat", f.rho_uv)
        .with_diag("objective", f.objective)
        .with_diag("n_e", T::from_count(exp.len()))
        .with_diag("n_o", T::from_count(obs.len()));
    if let Some(c) = f.constraints {
        r = r
            .with_diag("c1_hat", c.c1)
            .with_diag("c2_hat", c.c2)
            .with_diag("gamma_hat", c.gamma)
            .with_diag("sigma_v_hat", c.sigma_v);
    }
    Ok(r)
}

/// Binary-outcome data-generating process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbitDgp {
    pub beta1: f64,
    pub beta2: f64,
    pub rho_zu: f64,
    pub rho_uv: f64,
    pub gamma: f64,
    pub sigma_v: f64,
    pub n_e: usize,
    pub n_o: usize,
    pub seed: u64,
}

impl Default for ProbitDgp {
    fn default() -> Self {
        Self {
            beta1: 0.5,
            beta2: 0.1,
            rho_zu: 0.2,
            rho_uv: 0.5,
            gamma: 0.95,
            sigma_v: 1.0,
            n_e: 200,
            n_o: 20_000,
            seed: 0,
        }
    }
}

impl ProbitDgp {
    pub fn params(&self) -> ProbitParams<f64> {
        ProbitParams {
            beta1: self.beta1,
            b2: self.beta2 + self.rho_zu,
            rho_uv: self.rho_uv,
            gamma: self.gamma,
            sigma_v: self.sigma_v,
        }
    }

    /// Experimental units first, then observational ones.
    pub fn draw<T: Scalar>(&self, replication: u64) -> Result<FusedDataset<T>> {
        self.params().validate()?;
        let mut rng = replication_rng(self.seed, replication);
        let mut recs = Vec::with_capacity(self.n_e + self.n_o);
        let tail = (1.0 - self.rho_uv * self.rho_uv).sqrt();
        for k in 0..self.n_e + self.n_o {
            let g = if k < self.n_e { Group::E } else { Group::O };
            let z: f64 = rng.sample(StandardNormal);
            let e: f64 = rng.sample(StandardNormal);
            let w: f64 = rng.sample(StandardNormal);
            let u = self.rho_zu * z + e;
            let v = self.sigma_v * (self.rho_uv * e + tail * w);
            let x = match g {
                Group::E => rng.sample(StandardNormal),
                Group::O => self.gamma * z + v,
            };
            let latent = self.beta1 * x + self.beta2 * z + u;
            recs.push(UnitRecord {
                y: T::lit(if latent > 0.0 { 1.0 } else { 0.0 }),
                x: T::lit(x),
                z: T::lit(z),
                g,
            });
        }
        FusedDataset::new(recs)
    }
}

/// `β̂₁` of the experiment-only and combined estimators per replication, in
/// replication order.
pub fn probit_replications(dgp: &ProbitDgp, replications: usize, mode: PenaltyMode) -> Vec<(Option<f64>, Option<f64>)> {
    (0..replications)
        .into_par_iter()
        .map(|r| match dgp.draw::<f64>(r as u64) {
            Ok(ds) => {
                let (exp, obs) = split(&ds);
                let e = probit_mle(&exp).ok().map(|f| f.beta1);
                let c = probit_combined_fit(&exp, &obs, mode).ok().map(|f| f.beta1);
                (e, c)
            }
            Err(_) => (None, None),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small(seed: u64, n_e: usize, n_o: usize) -> FusedDataset<f64> {
        ProbitDgp {
            n_e,
            n_o,
            seed,
            ..Default::default()
        }
        .draw(0)
        .unwrap()
    }

    #[test]
    fn coin_flip_likelihood() {
        let (e, _) = split(&small(1, 50, 10));
        let ll = probit_loglik(0.0, 0.0, &e).unwrap();
        assert!((ll - 50.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_binary() {
        let b = Block::from_columns(vec![0.0, 1.0, 0.5], vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 0.0]);
        assert_eq!(probit_loglik(0.1, 0.1, &b), Err(FusionError::NonBinaryOutcome(2)));
        assert_eq!(obs_constraints(&b), Err(FusionError::NonBinaryOutcome(2)));
    }

    #[test]
    fn constant_z_is_degenerate() {
        let b = Block::from_columns(vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 2.0, 3.0, -1.0], vec![1.0; 4]);
        assert_eq!(obs_constraints(&b), Err(FusionError::DegenerateZ));
    }

    #[test]
    fn finite_in_the_tails() {
        let b = Block::from_columns(vec![1.0, 0.0], vec![1.0, 1.0], vec![0.0, 0.0]);
        for idx in [-30.0f64, -300.0, 30.0, 300.0] {
            let ll = probit_loglik(idx, 0.0, &b).unwrap();
            assert!(ll.is_finite(), "{idx}: {ll}");
        }
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        let (e, _) = split(&small(2, 300, 10));
        for (b1, b2) in [(0.3, -0.2), (1.5, 0.7), (-0.4, 2.0)] {
            let d = probit_loglik_derivs(b1, b2, &e).unwrap();
            let h = 1e-5;
            let f = |a: f64, b: f64| loglik_value(a, b, &e);
            let g0 = (f(b1 + h, b2) - f(b1 - h, b2)) / (2.0 * h);
            let g1 = (f(b1, b2 + h) - f(b1, b2 - h)) / (2.0 * h);
            assert!((d.grad[0] - g0).abs() <= 1e-6 * g0.abs().max(1.0));
            assert!((d.grad[1] - g1).abs() <= 1e-6 * g1.abs().max(1.0));
            let gd = |a: f64, b: f64| loglik_derivs(a, b, &e).grad;
            let h00 = (gd(b1 + h, b2)[0] - gd(b1 - h, b2)[0]) / (2.0 * h);
            let h01 = (gd(b1, b2 + h)[0] - gd(b1, b2 - h)[0]) / (2.0 * h);
            assert!((d.neg_hess[0][0] + h00).abs() <= 1e-5 * h00.abs().max(1.0));
            assert!((d.neg_hess[0][1] + h01).abs() <= 1e-5 * h01.abs().max(1.0));
        }
    }

    #[test]
    fn mle_is_stationary() {
        let (e, _) = split(&small(3, 500, 10));
        let f = probit_mle(&e).unwrap();
        let d = loglik_derivs(f.beta1, f.b2, &e);
        assert!(d.grad[0].abs() < 1e-8 && d.grad[1].abs() < 1e-8);
    }

    #[test]
    fn separated_data_does_not_converge() {
        let b = Block::from_columns(vec![0.0, 0.0, 1.0, 1.0], vec![-2.0, -1.0, 1.0, 2.0], vec![0.3, -0.1, 0.2, -0.4]);
        assert!(matches!(probit_mle(&b), Err(FusionError::NonConvergence { .. })));
    }

    #[test]
    fn hard_mode_satisfies_constraints_and_trace_is_monotone() {
        let ds = small(4, 200, 5000);
        let (exp, obs) = split(&ds);
        let f = probit_combined_fit(&exp, &obs, PenaltyMode::Hard).unwrap();
        let c = f.constraints.unwrap();
        assert!((constraint_c1(f.beta1, f.rho_uv, c.sigma_v) - c.c1).abs() < 1e-8);
        assert!((constraint_c2(f.b2, f.rho_uv, c.gamma, c.sigma_v) - c.c2).abs() < 1e-8);
        assert!(f.search.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(f.var_beta1 > 0.0);
        let q = probit_combined_fit(&exp, &obs, PenaltyMode::Quadratic).unwrap();
        assert!(q.search.trace.windows(2).all(|w| w[1] >= w[0]));
        assert!(q.var_beta1 > 0.0);
    }

    #[test]
    fn no_observational_data_reduces_to_experiment_only() {
        let (exp, _) = split(&small(5, 300, 10));
        let empty = Block::default();
        let q = probit_combined_fit(&exp, &empty, PenaltyMode::Quadratic).unwrap();
        let e = probit_mle(&exp).unwrap();
        assert!((q.beta1 - e.beta1).abs() < 1e-10);
        assert_eq!(
            probit_combined_fit(&exp, &empty, PenaltyMode::Hard).unwrap_err(),
            FusionError::EmptyGroup(Group::O)
        );
    }

    #[test]
    fn zero_correlation_constraints_are_the_structural_slopes() {
        let dgp = ProbitDgp {
            rho_uv: 0.0,
            n_e: 10,
            n_o: 200_000,
            ..Default::default()
        };
        let (_, obs) = split(&dgp.draw::<f64>(0).unwrap());
        let c = obs_constraints(&obs).unwrap();
        let p = dgp.params();
        assert!((c.c1 - p.beta1).abs() < 4.0 * c.cov[0][0].sqrt());
        assert!((c.c2 - p.b2).abs() < 4.0 * c.cov[1][1].sqrt());
        assert!((c.gamma - 0.95).abs() < 4.0 * c.cov[2][2].sqrt());
    }

    #[test]
    fn report_shape() {
        let ds = small(6, 100, 2000);
        let r = probit_combined(&ds, PenaltyMode::Hard).unwrap();
        assert_eq!(r.method, Method::ProbitCombined);
        assert!(r.diagnostics.contains_key("c1_hat"));
        let e = probit_experiment_only(&split(&ds).0).unwrap();
        assert_eq!(e.method, Method::ProbitExperimentOnly);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn loglik_finite_for_moderate_indices(b1 in -10.0f64..10.0, b2 in -10.0f64..10.0, seed in 0u64..50) {
            let (e, _) = split(&small(seed, 40, 5));
            let ll = probit_loglik(b1, b2, &e).unwrap();
            prop_assert!(ll.is_finite() && ll <= 0.0);
        }

        #[test]
        fn constraints_invert_hard_path(c1 in -2.0f64..2.0, c2 in -2.0f64..2.0, rho in -0.99f64..0.99, g in 0.1f64..2.0, sv in 0.2f64..3.0) {
            let c = ObsConstraints { c1, c2, gamma: g, sigma_v: sv, cov: [[0.0; 4]; 4], n: 1 };
            let (b1, b2) = c.hard_path(rho);
            prop_assert!((constraint_c1(b1, rho, sv) - c1).abs() < 1e-10);
            prop_assert!((constraint_c2(b2, rho, g, sv) - c2).abs() < 1e-10);
        }
    }
}
