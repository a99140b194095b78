use expfuse::{load_csv, read_csv, split, write_csv, Dataset, Group, UnitRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_dataset(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let recs = (0..n)
        .map(|_| UnitRecord {
            y: rng.sample::<f64, _>(StandardNormal) * 1e3,
            x: rng.sample::<f64, _>(StandardNormal) / 7.0,
            z: rng.sample(StandardNormal),
            g: if rng.random_bool(0.3) { Group::E } else { Group::O },
        })
        .collect();
    Dataset::new(recs).unwrap()
}

#[test]
fn csv_round_trip_on_1000_rows() {
    let ds = random_dataset(1000, 11);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("d.csv");
    write_csv(&ds, std::fs::File::create(&p).unwrap()).unwrap();
    let back: Dataset = load_csv(&p).unwrap();
    assert_eq!(back, ds);
    let mut again = Vec::new();
    write_csv(&back, &mut again).unwrap();
    assert_eq!(again, std::fs::read(&p).unwrap());
}

#[test]
fn loading_is_deterministic_and_tolerates_crlf() {
    let text = "y,x,z,g\r\n1.5,2,3,E\r\n0,1e-3,-2,O\r\n";
    let a: Dataset = read_csv(text.as_bytes()).unwrap();
    let b: Dataset = read_csv(text.as_bytes()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records()[1].x, 1e-3);
}

#[test]
fn split_means_match_groupwise_fold() {
    let ds = random_dataset(10_000, 12);
    let (e, o) = split(&ds);
    assert_eq!(e.len() + o.len(), ds.len());
    for (g, b) in [(Group::E, &e), (Group::O, &o)] {
        let (mut s, mut n) = (0.0, 0usize);
        for r in ds.records().iter().filter(|r| r.g == g) {
            s += r.z;
            n += 1;
        }
        assert_eq!(n, b.len());
        let direct = s / n as f64;
        let via = b.z.iter().sum::<f64>() / b.len() as f64;
        assert!((direct - via).abs() < 1e-12);
    }
}
