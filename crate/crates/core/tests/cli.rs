use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use expfuse::load_csv;
use expfuse::simulation::parse_config;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_expfuse"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn sample(dir: &Path, seed: u64) -> PathBuf {
    let p = dir.join(format!("s{seed}.csv"));
    let out = bin()
        .args(["simulate", "--reps", "2", "--seed", &seed.to_string(), "--emit-samples"])
        .arg(&p)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    p
}

fn json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn body(out: &Output) -> Vec<String> {
    String::from_utf8(out.stdout.clone())
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

#[test]
fn gmm_report_shape() {
    let dir = tempfile::tempdir().unwrap();
    let p = sample(dir.path(), 1);
    let v = json(&run(&["estimate", "--method", "gmm", p.to_str().unwrap()]));
    assert_eq!(v["method"], "CombinedGMM");
    assert!(v["var_beta1"].as_f64().unwrap().is_finite());
    for k in ["beta1_hat", "b2_hat", "hyperparameters", "diagnostics", "manifest"] {
        assert!(v.get(k).is_some(), "{k}");
    }
    let digest = v["manifest"]["input_sha256"].as_str().unwrap();
    assert_eq!(digest, expfuse::cli::sha256_hex(&std::fs::read(&p).unwrap()));
}

#[test]
fn infinite_lambda_has_zero_residual() {
    let dir = tempfile::tempdir().unwrap();
    let p = sample(dir.path(), 2);
    let v = json(&run(&["estimate", "--method", "regularized", "--lambda", "inf", p.to_str().unwrap()]));
    assert_eq!(v["method"], "Regularized");
    assert!(v["diagnostics"]["constraint_residual"].as_f64().unwrap().abs() < 1e-10);
    assert_eq!(v["hyperparameters"]["lambda_infinite"], 1.0);
}

#[test]
fn estimate_is_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let p = sample(dir.path(), 3);
    for method in ["weighted", "cv-weighted", "cv-regularized", "gmm-two-step"] {
        let a = run(&["estimate", "--method", method, p.to_str().unwrap()]);
        let b = run(&["estimate", "--method", method, p.to_str().unwrap()]);
        assert!(a.status.success());
        assert_eq!(a.stdout, b.stdout, "{method}");
    }
}

#[test]
fn hyperparameter_flags() {
    let dir = tempfile::tempdir().unwrap();
    let p = sample(dir.path(), 4);
    let ps = p.to_str().unwrap();
    let v = json(&run(&["estimate", "--method", "weighted", "--weight", "0.25", ps]));
    assert_eq!(v["hyperparameters"]["w_o"], 0.25);
    let v = json(&run(&["estimate", "--method", "regularized", "--lambda", "0", ps]));
    let e = json(&run(&["estimate", "--method", "experiment-only", ps]));
    assert!((v["beta1_hat"].as_f64().unwrap() - e["beta1_hat"].as_f64().unwrap()).abs() < 1e-12);
    assert_eq!(run(&["estimate", "--method", "weighted", "--weight", "1.5", ps]).status.code(), Some(2));
    assert_eq!(run(&["estimate", "--method", "gmm", "--lambda", "1", ps]).status.code(), Some(2));
    assert_eq!(run(&["estimate", "--method", "regularized", "--lambda", "-1", ps]).status.code(), Some(2));
    assert_eq!(run(&["estimate", "--method", "bogus", ps]).status.code(), Some(2));
}

#[test]
fn exit_codes_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "y,x,z,g\n1,1,1,E\n1,1,1,O\n1,1,1,O\n1,1,1,X\n").unwrap();
    let out = run(&["estimate", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1);
    assert!(err.starts_with("error[UnknownGroupTag]"), "{err}");

    // collinear experimental design is a failure of the method, not the input
    let sing = dir.path().join("sing.csv");
    std::fs::write(&sing, "y,x,z,g\n1,1,1,E\n2,2,2,E\n3,3,3,E\n4,4,4,E\n1,0.5,1,O\n2,1,0,O\n0,2,1,O\n").unwrap();
    let out = run(&["estimate", "--method", "experiment-only", sing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[SingularDesign]"));

    let nb = dir.path().join("nb.csv");
    std::fs::write(&nb, "y,x,z,g\n1,1,1,E\n0.5,2,0,E\n0,3,1,E\n1,0.5,1,O\n0,1,0,O\n1,2,1,O\n").unwrap();
    let out = run(&["estimate", "--model", "probit", "--method", "experiment-only", nb.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[NonBinaryOutcome]"));
}

#[test]
fn probit_model_path() {
    let dir = tempfile::tempdir().unwrap();
    let ds = expfuse::probit::ProbitDgp {
        n_e: 300,
        n_o: 5000,
        ..Default::default()
    }
    .draw::<f64>(0)
    .unwrap();
    let p = dir.path().join("probit.csv");
    let mut f = std::fs::File::create(&p).unwrap();
    expfuse::write_csv(&ds, &mut f).unwrap();
    drop(f);
    let ps = p.to_str().unwrap();
    let e = json(&run(&["estimate", "--model", "probit", "--method", "experiment-only", ps]));
    assert_eq!(e["method"], "ProbitExperimentOnly");
    for pen in ["hard", "quadratic"] {
        let c = json(&run(&["estimate", "--model", "probit", "--method", "combined", "--penalty", pen, ps]));
        assert_eq!(c["method"], "ProbitCombined");
        assert!(c["var_beta1"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn simulate_table_shape_and_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("base.cfg");
    std::fs::write(&cfg, "sigma_v2 = 0.05\nreplications = 50\n").unwrap();
    let out = run(&["simulate", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert!(text.contains(&format!("# input_sha256: {}", expfuse::cli::sha256_hex(b"sigma_v2 = 0.05\nreplications = 50\n"))));
    let rows = body(&out);
    assert_eq!(rows[0], "estimator,bias,bias2,variance,mse,relative_mse,efficiency_gain,failures,replications");
    let names: Vec<&str> = rows[1..].iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["experiment-only", "gmm", "ols-obs", "iv-obs"]);
    for r in &rows[1..] {
        let f: Vec<f64> = r.split(',').skip(1).map(|c| c.parse().unwrap()).collect();
        assert!((f[3] - (f[1] + f[2])).abs() < 1e-10);
        assert_eq!(f[7], 50.0);
    }

    // the manifest's config block is itself a valid config
    let manifest: String = text
        .lines()
        .filter_map(|l| l.strip_prefix("# "))
        .filter_map(|l| l.split_once(": "))
        .filter(|(k, _)| !["subcommand", "version", "input_sha256"].contains(k))
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect();
    let parsed = parse_config::<f64>(&manifest).unwrap();
    assert_eq!(parsed.replications, 50);
}

#[test]
fn q_sweep_shape() {
    let out = run(&["simulate", "--reps", "20", "--sweep", "Q=0.025,0.05,0.1,0.2,0.3,0.5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = body(&out);
    assert!(rows[0].starts_with("Q,estimator,"));
    assert_eq!(rows.len(), 1 + 6 * 4);
    assert!(rows[1].starts_with("0.025,experiment-only,"));
    assert_eq!(run(&["simulate", "--reps", "20", "--sweep", "Q=0.01"]).status.code(), Some(2));
    assert_eq!(run(&["simulate", "--reps", "20", "--sweep", "beta1=1"]).status.code(), Some(2));
}

#[test]
fn smoke_run_is_fast() {
    let t = Instant::now();
    assert!(run(&["simulate", "--reps", "2"]).status.success());
    assert!(t.elapsed().as_secs_f64() < 5.0);
}

#[test]
fn emitted_samples_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let p = sample(dir.path(), 5);
    let ds = load_csv::<f64>(&p).unwrap();
    assert_eq!((ds.n_e(), ds.n_o()), (100, 1900));
    let direct = expfuse::simulation::draw_sample(
        &expfuse::SimConfig {
            seed: 5,
            ..Default::default()
        },
        0,
    )
    .unwrap();
    assert_eq!(ds, direct);
}

#[test]
fn tune_output_is_cv_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = sample(dir.path(), 6);
    let out = run(&["tune", p.to_str().unwrap()]);
    let rows = body(&out);
    assert_eq!(rows[0], "hyperparameter,cv_error,selected");
    assert_eq!(rows.len(), 22);
    assert_eq!(rows[1..].iter().filter(|r| r.ends_with(",1")).count(), 1);
    let out = run(&["tune", "--param", "lambda", "--grid", "0,1,inf", p.to_str().unwrap()]);
    let rows = body(&out);
    assert_eq!(rows.len(), 4);
    assert!(rows[3].starts_with("inf,"));
}

#[test]
fn design_examples() {
    let rows = body(&run(&["design", "--q", "0.025"]));
    let cells = |r: &str| -> Vec<f64> { r.split(',').skip(1).map(|c| c.parse().unwrap()).collect() };
    let random = cells(&rows[1]);
    assert!((random[0] - (1.0 + 0.95 * 0.95 * 0.95)).abs() < 1e-12);
    let tail = cells(&rows[2]);
    assert!((tail[0] - 4.6).abs() < 0.1 && (tail[1] - 0.22).abs() < 0.01);

    // no observational data: ratio 1
    let rows = body(&run(&["design", "--pi-e", "1", "--q", ""]));
    assert_eq!(cells(&rows[1])[0], 1.0);
}
