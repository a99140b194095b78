//! Closed-form minimizers checked against brute-force objective grids that
//! are computed from the raw columns.

use expfuse::simulation::draw_sample;
use expfuse::{split, Config, DataBlock, Estimator, Lambda, ObsContext, SimConfig, Weighting};

const STEPS: usize = 200;

fn centered(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|a| a - m).collect()
}

struct Centered {
    y: Vec<f64>,
    x: Vec<f64>,
    z: Vec<f64>,
}

impl Centered {
    fn new(b: &DataBlock) -> Self {
        Self {
            y: centered(&b.y),
            x: centered(&b.x),
            z: centered(&b.z),
        }
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(p, q)| p * q).sum()
    }

    /// Σ (y - b1 x - b2 z) w
    fn moment(&self, b1: f64, b2: f64, w: &[f64]) -> f64 {
        Self::dot(&self.y, w) - b1 * Self::dot(&self.x, w) - b2 * Self::dot(&self.z, w)
    }

    fn rss(&self, b1: f64, b2: f64) -> f64 {
        (0..self.y.len())
            .map(|i| {
                let e = self.y[i] - b1 * self.x[i] - b2 * self.z[i];
                e * e
            })
            .sum()
    }
}

/// Minimum over a square grid of half-width `r` around `(c1, c2)`.
fn grid_min(c1: f64, c2: f64, r: f64, f: impl Fn(f64, f64) -> f64) -> (f64, f64, f64) {
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for i in 0..=STEPS {
        for j in 0..=STEPS {
            let b1 = c1 - r + 2.0 * r * i as f64 / STEPS as f64;
            let b2 = c2 - r + 2.0 * r * j as f64 / STEPS as f64;
            let v = f(b1, b2);
            if v < best.0 {
                best = (v, b1, b2);
            }
        }
    }
    best
}

fn sample(seed: u64) -> (DataBlock, DataBlock) {
    let cfg = SimConfig {
        seed,
        ..Default::default()
    };
    split(&draw_sample(&cfg, 0).unwrap())
}

#[test]
fn gmm_closed_form_minimizes_the_weighted_quadratic_form() {
    let cfg = Config::default();
    for seed in 0..20 {
        let (e, o) = sample(seed);
        let ctx = ObsContext::new(&o, &cfg);
        let r = Estimator::Gmm(Weighting::Optimal).fit(&e, &ctx, &cfg).unwrap();
        let (ce, co) = (Centered::new(&e), Centered::new(&o));
        let w = [
            1.0 / Centered::dot(&ce.x, &ce.x),
            1.0 / Centered::dot(&ce.z, &ce.z),
            1.0 / Centered::dot(&co.z, &co.z),
        ];
        let q = |b1: f64, b2: f64| {
            let g = [ce.moment(b1, b2, &ce.x), ce.moment(b1, b2, &ce.z), co.moment(b1, b2, &co.z)];
            g.iter().zip(&w).map(|(m, wi)| m * m * wi).sum::<f64>()
        };
        let b2 = r.b2_hat.unwrap();
        let at = q(r.beta1_hat, b2);
        let (best, g1, g2) = grid_min(r.beta1_hat, b2, 0.5, q);
        assert!(at <= best + 1e-9 * (1.0 + best), "seed {seed}: {at} > {best}");
        let h = 1.0 / STEPS as f64;
        assert!((g1 - r.beta1_hat).abs() <= h && (g2 - b2).abs() <= h);
    }
}

#[test]
fn regularized_fit_minimizes_the_penalized_objective() {
    let cfg = Config::default();
    let (e, o) = sample(99);
    let ctx = ObsContext::new(&o, &cfg);
    let co = Centered::new(&o);
    let b_iv = Centered::dot(&co.y, &co.z) / Centered::dot(&co.x, &co.z);
    let gamma = Centered::dot(&co.x, &co.z) / Centered::dot(&co.z, &co.z);
    let ce = Centered::new(&e);
    for lambda in [0.0, 1.0, 50.0, 1e4] {
        let r = Estimator::Regularized(Lambda::Finite(lambda)).fit(&e, &ctx, &cfg).unwrap();
        let f = |b1: f64, b2: f64| {
            let c = b_iv - b1 - b2 / gamma;
            ce.rss(b1, b2) + lambda * c * c
        };
        let b2 = r.b2_hat.unwrap();
        let at = f(r.beta1_hat, b2);
        let (best, _, _) = grid_min(r.beta1_hat, b2, 1.0, f);
        assert!(at <= best + 1e-9 * best, "lambda {lambda}: {at} > {best}");
    }
    let inf = Estimator::Regularized(Lambda::Infinite).fit(&e, &ctx, &cfg).unwrap();
    let resid = b_iv - inf.beta1_hat - inf.b2_hat.unwrap() / gamma;
    assert!(resid.abs() < 1e-10);
}
