use std::fs;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use jumpcalc::bounds::{
    envelope, gamma_fn, gamma_inv, kappa, lambda_c, ode_approx_bound, psi, scaling_sweep, KappaQuery, SweepPoint,
};
use jumpcalc::mc::{
    exponential_martingale_check, logistic_intermediate_phase, martingale_check, quadratic_martingale_check,
    verify_lemma, verify_ode_approx, verify_sample_path, Verdict,
};
use jumpcalc::sim::{format_shortest, simulate as simulate_path, write_manifest, write_path_csv, BinaryManifest};
use jumpcalc::McReport;
use serde::Serialize;

use crate::config::{Query, RunConfig};
use crate::manifest::{now, RunManifest};
use crate::{BoundsArgs, Common, Format, Status};

/// Files produced by a command, held in memory until every step has succeeded.
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new() -> Self {
        Self { files: Vec::new() }
    }

    fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    /// Writes into `dir` with a manifest, or prints the first file to stdout.
    fn emit(self, dir: Option<&PathBuf>, mut manifest: Option<RunManifest>, status: Status) -> Result<Status> {
        let Some(dir) = dir else {
            if let Some((_, bytes)) = self.files.first() {
                print!("{}", String::from_utf8_lossy(bytes));
            }
            return Ok(status);
        };
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, bytes) in &self.files {
            let p = dir.join(name);
            fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        }
        if let Some(m) = manifest.as_mut() {
            m.outputs = self.files.iter().map(|f| f.0.clone()).collect();
            m.finished_at = now();
            m.exit_code = match status {
                Status::Ok => 0,
                Status::Violated => 1,
            };
            m.write(dir)?;
        }
        Ok(status)
    }
}

fn load(a: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.sim.seed = seed;
    }
    Ok(cfg)
}

fn manifest_for(command: &str, cfg: &RunConfig, threads: usize, started: String) -> RunManifest {
    RunManifest::new(command, cfg.hash(command), cfg.sim.seed, threads, started)
}

pub fn simulate(a: &Common) -> Result<Status> {
    let started = now();
    let cfg = load(a)?;
    let spec = cfg.model()?;
    let x0 = cfg.x0(&spec)?;
    let sim = cfg.sim.sim_config(None)?;
    let path = simulate_path(&spec, &x0, &sim, None).context("simulation failed")?;
    let mut csv = Vec::new();
    write_path_csv(&spec, &path, &mut csv)?;
    let mut out = Outputs::new();
    match a.format {
        Format::Csv => out.add("path.csv", csv),
        Format::Json => out.add("path.json", csv_to_json(&csv)?),
    }
    let mut bin = Vec::new();
    write_manifest(&BinaryManifest::of_path(&path), &mut bin)?;
    out.add("path.bin", bin);
    out.emit(a.out.as_ref(), Some(manifest_for("simulate", &cfg, a.threads, started)), Status::Ok)
}

/// `{"columns": [...], "rows": [[...], ...]}` with the same values as the CSV.
fn csv_to_json(csv: &[u8]) -> Result<Vec<u8>> {
    let text = std::str::from_utf8(csv)?;
    let mut lines = text.lines();
    let columns: Vec<&str> = lines.next().context("empty path CSV")?.split(',').collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse::<f64>().map_err(|e| anyhow!("{v}: {e}"))).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let mut s = serde_json::to_vec(&serde_json::json!({ "columns": columns, "rows": rows }))?;
    s.push(b'\n');
    Ok(s)
}

fn run_query(cfg: &RunConfig, q: &Query, threads: usize) -> Result<McReport> {
    Ok(match q {
        Query::LogisticIntermediate(iq) => {
            let ens = cfg.sim.ensemble(threads, Some(1.0))?;
            logistic_intermediate_phase(iq, &ens)?.0
        }
        Query::Lemma(exp) => {
            let spec = cfg.model()?;
            let ens = cfg.sim.ensemble(threads, Some(1.0))?;
            verify_lemma(&spec, &ens, exp)?
        }
        Query::Sweep { .. } => bail!("query.kind: sweep is run by the sweep command"),
        _ => {
            let spec = cfg.model()?;
            let x0 = cfg.x0(&spec)?;
            let ens = cfg.sim.ensemble(threads, None)?;
            match q {
                Query::SamplePath(sp) => {
                    if sp.lambdas.is_empty() || sp.a_values.is_empty() || sp.signs.is_empty() {
                        bail!("query: lambdas, a_values and signs must be non-empty");
                    }
                    verify_sample_path(&spec, &x0, &ens, sp)?
                }
                Query::Martingale(mq) => martingale_check(&spec, &x0, &ens, mq)?,
                Query::ExponentialMartingale { lambda } => exponential_martingale_check(&spec, &x0, &ens, *lambda)?,
                Query::QuadraticMartingale => quadratic_martingale_check(&spec, &x0, &ens)?,
                Query::OdeApprox(oq) => verify_ode_approx(&spec, &x0, &ens, oq)?,
                _ => unreachable!("handled above"),
            }
        }
    })
}

fn report_csv(r: &McReport) -> Vec<u8> {
    format!("{}\n{}", McReport::CSV_HEADER, r.csv_rows()).into_bytes()
}

pub fn verify(a: &Common) -> Result<Status> {
    let started = now();
    let cfg = load(a)?;
    let q = cfg.query()?;
    let report = run_query(&cfg, q, a.threads)?;
    for p in &report.probabilities {
        eprintln!(
            "{:<12} {}: p={} [{}, {}] bound={}",
            verdict_name(p.verdict),
            p.label,
            format_shortest(p.wilson.p_hat),
            format_shortest(p.wilson.lo),
            format_shortest(p.wilson.hi),
            format_shortest(p.bound)
        );
    }
    for m in &report.means {
        eprintln!(
            "{:<12} {}: mean={} se={} target={}",
            verdict_name(m.verdict),
            m.label,
            format_shortest(m.mean),
            format_shortest(m.stderr),
            format_shortest(m.target)
        );
    }
    for n in &report.notes {
        eprintln!("note: {n}");
    }
    let status = if report.all_respected() && !report.invalid { Status::Ok } else { Status::Violated };
    let mut out = Outputs::new();
    match a.format {
        Format::Csv => out.add("report.csv", report_csv(&report)),
        Format::Json => out.add("report.json", (report.to_json() + "\n").into_bytes()),
    }
    out.emit(a.out.as_ref(), Some(manifest_for("verify", &cfg, a.threads, started)), status)
}

fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Respected => "respected",
        Verdict::Violated => "VIOLATED",
        Verdict::Inconclusive => "inconclusive",
    }
}

/// One row of the bounds table. `log_value` is the natural log of the value, computed
/// directly where the value itself overflows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundRow {
    pub quantity: String,
    pub inputs: String,
    pub value: f64,
    pub log_value: Option<f64>,
}

impl BoundRow {
    fn new(quantity: &str, inputs: &str, value: f64, log_value: Option<f64>) -> Self {
        Self { quantity: quantity.into(), inputs: inputs.into(), value, log_value }
    }
}

/// Parses `key=value` pairs; each of `keys` is required, listed aliases are accepted.
fn pairs(args: &[String], flag: &str, keys: &[&[&str]]) -> Result<Vec<f64>> {
    let mut vals = vec![None; keys.len()];
    for arg in args {
        let (k, v) = arg.split_once('=').with_context(|| format!("--{flag}: expected KEY=VALUE, got {arg:?}"))?;
        let i = keys
            .iter()
            .position(|names| names.contains(&k))
            .with_context(|| format!("--{flag}: unknown key {k:?}"))?;
        let v: f64 = v.parse().map_err(|e| anyhow!("--{flag}: {k}={v}: {e}"))?;
        vals[i] = Some(v);
    }
    vals.iter()
        .zip(keys)
        .map(|(v, names)| v.with_context(|| format!("--{flag}: missing {}", names[0])))
        .collect()
}

fn positive_log(v: f64) -> Option<f64> {
    (v > 0.0).then(|| v.ln())
}

fn bound_rows(a: &BoundsArgs) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::new();
    if !a.kappa.is_empty() {
        let v = pairs(&a.kappa, "kappa", &[&["c", "c_delta"], &["gamma"], &["a"]])?;
        let k = kappa(&KappaQuery { c_delta: v[0], gamma: v[1], a: v[2] })?;
        rows.push(BoundRow::new("kappa", &a.kappa.join(" "), k.kappa, Some(k.log_kappa)));
    }
    if !a.psi.is_empty() {
        let y = pairs(&a.psi, "psi", &[&["y"]])?[0];
        let v = psi(y)?;
        rows.push(BoundRow::new("psi", &a.psi.join(" "), v, positive_log(v)));
    }
    if !a.gamma_inv.is_empty() {
        let y = pairs(&a.gamma_inv, "gamma-inv", &[&["y"]])?[0];
        let v = gamma_inv(y)?;
        rows.push(BoundRow::new("gamma_inv", &a.gamma_inv.join(" "), v, positive_log(v)));
    }
    if !a.gamma.is_empty() {
        let x = pairs(&a.gamma, "gamma", &[&["x"]])?[0];
        let v = gamma_fn(x);
        rows.push(BoundRow::new("gamma", &a.gamma.join(" "), v, positive_log(v)));
    }
    if !a.lambda_c.is_empty() {
        let v = pairs(&a.lambda_c, "lambda-c", &[&["gamma"], &["c", "c_delta"]])?;
        let l = lambda_c(v[0], v[1])?;
        rows.push(BoundRow::new("lambda_c", &a.lambda_c.join(" "), l, positive_log(l)));
    }
    if !a.envelope.is_empty() {
        let v = pairs(&a.envelope, "envelope", &[&["lambda"], &["a"], &["c", "c_delta"], &["qvar"]])?;
        let e = envelope(v[0], v[1], v[2], v[3])?;
        let inputs = a.envelope.join(" ");
        rows.push(BoundRow::new("envelope.width", &inputs, e.width, positive_log(e.width)));
        rows.push(BoundRow::new("envelope.one_sided", &inputs, e.one_sided.value, Some(-v[0] * v[1])));
    }
    if let Some(path) = &a.config {
        let cfg = RunConfig::load(path)?;
        rows.extend(query_bound_rows(&cfg)?);
    }
    if rows.is_empty() {
        bail!("nothing to evaluate: pass at least one of --kappa, --psi, --gamma-inv, --gamma, --lambda-c, --envelope, --config");
    }
    Ok(rows)
}

fn query_bound_rows(cfg: &RunConfig) -> Result<Vec<BoundRow>> {
    let q = cfg.query()?;
    let mut rows = Vec::new();
    match q {
        Query::Lemma(exp) => {
            let b = exp.query.evaluate()?;
            let name = format!("{:?}", exp.query.id());
            rows.push(BoundRow::new("lemma.probability", &name, b.probability.value, positive_log(b.probability.raw)));
            rows.push(BoundRow::new("lemma.kappa", &name, b.log_kappa.exp(), Some(b.log_kappa)));
            if let Some(h) = b.horizon {
                rows.push(BoundRow::new("lemma.horizon", &name, h, positive_log(h)));
            }
        }
        Query::OdeApprox(oq) => {
            let horizon = cfg.sim.horizon.context("sim.horizon: required for ode_approx")?;
            let c_delta = match oq.c_delta {
                Some(c) => c,
                None => cfg.model()?.c_delta(),
            };
            let b = ode_approx_bound(oq.delta, oq.c_rho, c_delta, horizon, oq.lipschitz)?;
            rows.push(BoundRow::new("ode_approx.radius", "", b.radius, positive_log(b.radius)));
            rows.push(BoundRow::new("ode_approx.probability", "", b.probability.value, positive_log(b.probability.raw)));
            rows.push(BoundRow::new("ode_approx.kappa", "", b.log_kappa.exp(), Some(b.log_kappa)));
        }
        Query::Sweep { regime, grid } => {
            for p in scaling_sweep(regime, &grid.values()?)? {
                let inputs = format!("c={}", format_shortest(p.c_delta));
                rows.push(BoundRow::new("sweep.kappa", &inputs, p.log_kappa.exp(), Some(p.log_kappa)));
            }
        }
        other => bail!("query.kind: {} has no closed-form bound to evaluate", other.name()),
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(format_shortest).unwrap_or_default()
}

pub fn bounds(a: &BoundsArgs) -> Result<Status> {
    let rows = bound_rows(a)?;
    let bytes = match a.format {
        Format::Csv => {
            let mut s = String::from("quantity,inputs,value,log_value\n");
            for r in &rows {
                s.push_str(&format!("{},{},{},{}\n", r.quantity, r.inputs, format_shortest(r.value), opt(r.log_value)));
            }
            s.into_bytes()
        }
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(&rows)?;
            v.push(b'\n');
            v
        }
    };
    let mut out = Outputs::new();
    out.add(
        match a.format {
            Format::Csv => "bounds.csv",
            Format::Json => "bounds.json",
        },
        bytes,
    );
    out.emit(a.out.as_ref(), None, Status::Ok)
}

pub const SWEEP_HEADER: &str = "c_delta,log_kappa,scaled,feasible";

pub fn sweep(a: &Common) -> Result<Status> {
    let started = now();
    let cfg = load(a)?;
    let Query::Sweep { regime, grid } = cfg.query()? else {
        bail!("query.kind: sweep expected");
    };
    let points: Vec<SweepPoint<f64>> = scaling_sweep(regime, &grid.values()?)?;
    let mut out = Outputs::new();
    match a.format {
        Format::Csv => {
            let mut s = format!("{SWEEP_HEADER}\n");
            for p in &points {
                s.push_str(&format!(
                    "{},{},{},{}\n",
                    format_shortest(p.c_delta),
                    format_shortest(p.log_kappa),
                    format_shortest(p.scaled),
                    p.feasible
                ));
            }
            out.add("sweep.csv", s.into_bytes());
        }
        Format::Json => {
            let mut v = serde_json::to_vec_pretty(&points)?;
            v.push(b'\n');
            out.add("sweep.json", v);
        }
    }
    out.emit(a.out.as_ref(), Some(manifest_for("sweep", &cfg, a.threads, started)), Status::Ok)
}
