use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_jumpcalc"));
    c.env_remove("JUMPCALC_THREADS");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn event_rows(csv: &str) -> usize {
    csv.lines().skip(1).filter(|l| l.ends_with(",1")).count()
}

#[test]
fn simulate_writes_path_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = configs().join("poisson_simulate.json");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("path.csv")).unwrap();
    assert!(csv.starts_with("t,x,M,qvar,event_flag\n"));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "simulate");
    assert_eq!(m["seed"], 1);
    assert_eq!(m["outputs"], serde_json::json!(["path.csv", "path.bin"]));
    assert_eq!(m["config_hash"].as_str().unwrap().len(), 64);
    let bin = std::fs::read(out.join("path.bin")).unwrap();
    assert_eq!(&bin[..4], b"HJPM");
}

#[test]
fn poisson_event_count_averages_rate_times_horizon() {
    let cfg = configs().join("poisson_simulate.json");
    let n = 200;
    let total: usize = (0..n)
        .map(|seed| {
            let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", &seed.to_string()]);
            assert!(o.status.success());
            event_rows(&stdout(&o))
        })
        .sum();
    // Mean 10, standard error sqrt(10/200).
    let mean = total as f64 / n as f64;
    assert!((mean - 10.0).abs() < 4.0 * (10.0f64 / n as f64).sqrt(), "mean events {mean}");
}

#[test]
fn pure_flow_has_no_events() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "flow.json",
        r#"{"model": {"kind": "linear_flow", "a": -1.0}, "sim": {"horizon": 2.0, "x0": [1.0], "dt_grid": 0.5}}"#,
    );
    let o = run(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = stdout(&o);
    assert_eq!(event_rows(&csv), 0);
    assert_eq!(csv.lines().count(), 1 + 5);
}

#[test]
fn simulate_is_deterministic_and_seed_sensitive() {
    let cfg = configs().join("poisson_simulate.json");
    let a = stdout(&run(&["simulate", "--config", cfg.to_str().unwrap()]));
    let b = stdout(&run(&["simulate", "--config", cfg.to_str().unwrap()]));
    let c = stdout(&run(&["simulate", "--config", cfg.to_str().unwrap(), "--seed", "99"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn json_path_matches_csv() {
    let cfg = configs().join("poisson_simulate.json");
    let csv = stdout(&run(&["simulate", "--config", cfg.to_str().unwrap()]));
    let json: Value = serde_json::from_str(&stdout(&run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--format",
        "json",
    ])))
    .unwrap();
    let rows = json["rows"].as_array().unwrap();
    assert_eq!(rows.len(), csv.lines().count() - 1);
    for (line, row) in csv.lines().skip(1).zip(rows) {
        let parsed: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let from_json: Vec<f64> = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(parsed, from_json);
    }
}

#[test]
fn bad_config_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"model": {"kind": "poisson", "rate": 1.0, "sped": 2}, "sim": {"horizon": 1.0, "x0": [0.0]}}"#,
    );
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("model") && err.contains("sped"), "{err}");
    assert!(!out.exists());

    let cfg = write_config(dir.path(), "dim.json", r#"{"model": {"kind": "poisson", "rate": 1.0}, "sim": {"horizon": 1.0}}"#);
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sim.x0"));
    assert!(!out.exists());
}

#[test]
fn sample_path_verification_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("v");
    let cfg = configs().join("poisson_sample_path.json");
    let o = run(&[
        "verify",
        "--config",
        cfg.to_str().unwrap(),
        "--format",
        "json",
        "--out",
        out.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("report.json")).unwrap();
    let report = jumpcalc::McReport::from_json(&text).unwrap();
    assert_eq!(report.probabilities.len(), 18);
    assert!(report.all_respected());
    // Lossless round trip.
    assert_eq!(jumpcalc::McReport::from_json(&report.to_json()).unwrap(), report);
}

#[test]
fn understated_rate_bound_is_a_violation() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("sis_ode_approx.json")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["sim"]["n_paths"] = serde_json::json!(50);
    v["query"]["c_rho"] = serde_json::json!(0.00005625);
    let cfg = write_config(dir.path(), "low.json", &v.to_string());
    let o = run(&["verify", "--config", cfg.to_str().unwrap(), "--format", "json"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(jumpcalc::McReport::from_json(&stdout(&o)).unwrap().invalid);
}

#[test]
fn negated_level_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("poisson_sample_path.json")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["query"]["a_values"] = serde_json::json!([-1.0]);
    let cfg = write_config(dir.path(), "neg.json", &v.to_string());
    let o = run(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("must be positive"));
}

#[test]
fn empty_lambda_grid_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("poisson_sample_path.json")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    v["query"]["lambdas"] = serde_json::json!([]);
    let cfg = write_config(dir.path(), "empty.json", &v.to_string());
    assert_eq!(run(&["verify", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn verify_csv_is_identical_across_thread_counts() {
    let cfg = configs().join("birth_death_martingale.json");
    let one = run(&["verify", "--config", cfg.to_str().unwrap(), "--threads", "1"]);
    let many = bin()
        .args(["verify", "--config", cfg.to_str().unwrap()])
        .env("JUMPCALC_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(one.status.code(), Some(0), "{}", String::from_utf8_lossy(&one.stderr));
    assert_eq!(stdout(&one), stdout(&many));
    assert!(stdout(&one).starts_with("check,label,kind,n,estimate,lo,hi,target,verdict\n"));
}

#[test]
fn manifest_hash_tracks_results_not_threads() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("sweep_drift_barrier.json");
    let hash = |out: &str, extra: &[&str]| {
        let out = dir.path().join(out);
        let mut args = vec!["sweep", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        assert!(run(&args).status.success());
        let m: Value = serde_json::from_str(&std::fs::read_to_string(out.join("run.json")).unwrap()).unwrap();
        m["config_hash"].as_str().unwrap().to_string()
    };
    let a = hash("a", &[]);
    assert_eq!(a, hash("b", &["--threads", "4"]));
    assert_ne!(a, hash("c", &["--seed", "5"]));
}

#[test]
fn bounds_table_values() {
    let o = run(&["bounds", "--kappa", "c=0", "gamma=1", "a=1", "--psi", "y=0.6931471805599453", "--gamma-inv", "y=1", "--format", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<Value> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows[0]["quantity"], "kappa");
    assert!((rows[0]["log_value"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((rows[1]["value"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!((rows[2]["value"].as_f64().unwrap() - 0.852606).abs() < 1e-6);
    // The four-digit argument still reads 1.000.
    let o = run(&["bounds", "--psi", "y=0.6931"]);
    let line = stdout(&o).lines().nth(1).unwrap().to_string();
    let v: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
    assert!((v - 1.0).abs() < 5e-4 && format!("{v:.3}") == "1.000");
}

#[test]
fn bounds_usage_errors() {
    assert_eq!(run(&["bounds"]).status.code(), Some(2));
    assert_eq!(run(&["bounds", "--kappa", "gamma=1", "a=1"]).status.code(), Some(2));
    assert_eq!(run(&["bounds", "--psi", "y=-1"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn sweep_scaled_column_and_single_point_consistency() {
    let cfg = configs().join("sweep_drift_barrier.json");
    let o = run(&["sweep", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<Vec<String>> =
        text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 9);
    let scaled: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    // At α = 1, c_Δ log κ = (x − c)Γ⁻¹(μ/C)/2 tends to Γ⁻¹(1)/2.
    let limit = 0.852_605_502_013_726 / 2.0;
    assert!((scaled[8] - limit).abs() < (scaled[0] - limit).abs());
    assert!((scaled[8] - limit).abs() < 1e-3);

    let dir = tempfile::tempdir().unwrap();
    let single = write_config(
        dir.path(),
        "one.json",
        r#"{"query": {"kind": "sweep", "regime": {"alpha": 2.0, "c_const": 1.0, "item": "drift_barrier", "x": 1.0, "mu": 1.0}, "grid": [0.01]}}"#,
    );
    let s = stdout(&run(&["sweep", "--config", single.to_str().unwrap(), "--format", "json"]));
    let pts: Vec<Value> = serde_json::from_str(&s).unwrap();
    let b = stdout(&run(&["bounds", "--config", single.to_str().unwrap(), "--format", "json"]));
    let rows: Vec<Value> = serde_json::from_str(&b).unwrap();
    assert_eq!(pts.len(), 1);
    assert_eq!(pts[0]["log_kappa"], rows[0]["log_value"]);
}

#[test]
fn bounds_evaluates_lemma_config() {
    let cfg = configs().join("lattice_drift_barrier.json");
    let o = run(&["bounds", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("lemma.probability,DriftBarrier,"));
    assert!(text.contains("lemma.horizon,"));
}
