use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ConditionalFactor, DesignRule, SimulationConfig};
use crate::data::{FusedDataset, Group, UnitRecord};
use crate::error::{FusionError, Result};
use crate::scalar::Scalar;

/// Random stream for one replication: the config seed picks the key and the
/// replication index picks the stream, so draws do not depend on scheduling.
pub(crate) fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

struct Params {
    beta1: f64,
    beta2: f64,
    gamma: f64,
    theta: f64,
    e: ConditionalFactor,
    o: ConditionalFactor,
}

impl Params {
    fn unit<T: Scalar>(&self, rng: &mut ChaCha8Rng, z: f64, g: Group) -> UnitRecord<T> {
        let f = match g {
            Group::E => &self.e,
            Group::O => &self.o,
        };
        let (a, b) = (normal(rng), normal(rng));
        let u = f.rho_zu * z + f.l11 * a;
        let v = f.l21 * a + f.l22 * b;
        let x = match g {
            Group::E => normal(rng),
            Group::O => self.gamma * z + v,
        };
        let y = self.beta1 * x + self.beta2 * z + self.theta * x * u + u;
        UnitRecord {
            y: T::lit(y),
            x: T::lit(x),
            z: T::lit(z),
            g,
        }
    }
}

/// One simulated dataset with exactly `n_E` experimental units, listed
/// before the `round(n_E π_O/π_E)` observational units.
pub fn draw_sample<T: Scalar>(cfg: &SimulationConfig<T>, replication: u64) -> Result<FusedDataset<T>> {
    cfg.validate()?;
    let p = Params {
        beta1: cfg.beta1.as_f64(),
        beta2: cfg.beta2.as_f64(),
        gamma: cfg.gamma.as_f64(),
        theta: cfg.theta.as_f64(),
        e: cfg.factor(cfg.rho_zu_e)?,
        o: cfg.factor(cfg.rho_zu_o)?,
    };
    let mut rng = replication_rng(cfg.seed, replication);
    let n_e = cfg.n_e;
    let n_o = cfg.n_o();
    let n = n_e + n_o;
    let mut records = Vec::with_capacity(n);
    match cfg.design {
        DesignRule::RandomSplit => {
            for g in std::iter::repeat_n(Group::E, n_e).chain(std::iter::repeat_n(Group::O, n_o)) {
                let z = normal(&mut rng);
                records.push(p.unit(&mut rng, z, g));
            }
        }
        DesignRule::QuantileTails(q) => {
            let z: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| z[a].total_cmp(&z[b]));
            let k = ((q.as_f64() * n as f64).round() as usize).min(n);
            let tails: Vec<usize> = if 2 * k >= n {
                order.clone()
            } else {
                order[..k].iter().chain(&order[n - k..]).copied().collect()
            };
            if tails.len() < n_e {
                return Err(FusionError::InfeasibleDesign(format!(
                    "{} units in the Q = {q} tails, need {n_e}",
                    tails.len()
                )));
            }
            let mut is_e = vec![false; n];
            for j in index::sample(&mut rng, tails.len(), n_e) {
                is_e[tails[j]] = true;
            }
            let mut obs = Vec::with_capacity(n_o);
            for (i, &zi) in z.iter().enumerate() {
                if is_e[i] {
                    records.push(p.unit(&mut rng, zi, Group::E));
                } else {
                    obs.push(p.unit(&mut rng, zi, Group::O));
                }
            }
            records.extend(obs);
        }
    }
    FusedDataset::new(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split;
    use crate::efficiency::quantile_design_variances;

    fn var(v: &[f64]) -> f64 {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn sizes_and_determinism() {
        let cfg = SimulationConfig::<f64>::default();
        let a = draw_sample(&cfg, 7).unwrap();
        assert_eq!((a.n_e(), a.n_o()), (100, 1900));
        assert_eq!(a, draw_sample(&cfg, 7).unwrap());
        assert_ne!(a, draw_sample(&cfg, 8).unwrap());
        let other = SimulationConfig { seed: 1, ..cfg };
        assert_ne!(a, draw_sample(&other, 7).unwrap());
    }

    #[test]
    fn first_stage_and_experimental_treatment() {
        let cfg = SimulationConfig::<f64> { n_e: 20_000, pi_e: 0.5, ..Default::default() };
        let (e, o) = split(&draw_sample(&cfg, 0).unwrap());
        assert!((var(&e.x) - 1.0).abs() < 0.05);
        assert!((var(&o.x) - 1.0).abs() < 0.05);
        let corr_e: f64 = e.x.iter().zip(&e.z).map(|(a, b)| a * b).sum::<f64>() / e.len() as f64;
        assert!(corr_e.abs() < 0.03);
    }

    #[test]
    fn quantile_design_shapes_experimental_z() {
        let cfg = SimulationConfig::<f64> {
            design: DesignRule::QuantileTails(0.025),
            ..Default::default()
        };
        let ds = draw_sample(&cfg, 3).unwrap();
        let (e, o) = split(&ds);
        assert_eq!((e.len(), o.len()), (100, 1900));
        // all E units sit beyond the empirical tails; 1.96 up to quantile noise
        assert!(e.z.iter().all(|z| z.abs() > 1.7), "{:?}", e.z.iter().cloned().fold(9.0, |a: f64, b| a.min(b.abs())));
        let (vze, _) = quantile_design_variances(0.025, 0.05).unwrap();
        assert!((var(&e.z) - vze).abs() < 1.0);

        let half = SimulationConfig { design: DesignRule::QuantileTails(0.5), n_e: 5000, ..cfg };
        let (e, _) = split(&draw_sample(&half, 0).unwrap());
        assert!((var(&e.z) - 1.0).abs() < 0.06);
    }

    #[test]
    fn infeasible_when_tails_are_too_thin() {
        let cfg = SimulationConfig::<f64> {
            n_e: 3,
            pi_e: 0.9,
            design: DesignRule::QuantileTails(0.45),
            ..Default::default()
        };
        // pool of 3 units with round(1.35) = 1 per tail
        assert!(matches!(draw_sample(&cfg, 0), Err(FusionError::InfeasibleDesign(_))));
    }
}
