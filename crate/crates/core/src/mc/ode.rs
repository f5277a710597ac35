use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{check_x0, EnsembleConfig, McError, McReport, ProbabilityCheck};
use crate::bounds::ode_approx_bound;
use crate::process::ProcessSpec;
use crate::scalar::Scalar;
use crate::sim::{simulate_with, PathObserver, Sample, SampleKind, SimConfig, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OdeQuery<S> {
    pub delta: S,
    /// Lipschitz constant `L` of the drift field.
    pub lipschitz: S,
    /// Bound on `ρ = q·c_Δ²`, audited along paths.
    pub c_rho: S,
    /// Defaults to the process's jump bound.
    #[serde(default)]
    pub c_delta: Option<S>,
    /// Grid intervals for the reference flow.
    #[serde(default = "default_flow_steps")]
    pub flow_steps: u32,
}

fn default_flow_steps() -> u32 {
    4096
}

/// Reference flow on a uniform grid, interpolated by cubic Hermite polynomials.
struct FlowTable<S> {
    dim: usize,
    h: S,
    x: Vec<S>,
    dx: Vec<S>,
}

struct Recorder<S> {
    h: S,
    last_t: S,
    x: Vec<S>,
}

impl<S: Scalar> PathObserver<S> for Recorder<S> {
    fn observe(&mut self, s: &Sample<'_, S>) {
        match s.kind {
            SampleKind::Grid => {}
            // A grid node rounded to just below the horizon duplicates the final sample.
            SampleKind::Final if s.t - self.last_t < self.h * S::lit(1e-6) => {
                let d = s.x.len();
                self.x.truncate(self.x.len() - d);
            }
            SampleKind::Final => {}
            _ => return,
        }
        self.last_t = s.t;
        self.x.extend_from_slice(s.x);
    }
}

impl<S: Scalar> FlowTable<S> {
    fn build(spec: &ProcessSpec<S>, x0: &[S], horizon: S, steps: u32) -> Result<Self, McError> {
        let flow = spec.drift_flow();
        let h = horizon / S::from_u32(steps).expect("step count fits scalar");
        let cfg = SimConfig::new(horizon).with_grid(h);
        let mut rec = Recorder { h, last_t: -horizon, x: Vec::new() };
        simulate_with(&flow, x0, &cfg, None, &[], &mut rec)?;
        let dim = spec.dim();
        let nodes = rec.x.len() / dim;
        if nodes != steps as usize + 1 {
            return Err(McError::Config(format!("reference flow produced {nodes} nodes, expected {}", steps + 1)));
        }
        let mut dx = vec![S::zero(); rec.x.len()];
        for k in 0..nodes {
            spec.drift_into(&rec.x[k * dim..(k + 1) * dim], &mut dx[k * dim..(k + 1) * dim]);
        }
        Ok(Self { dim, h, x: rec.x, dx })
    }

    /// `sup_i |x_i − φ_i(t)|`.
    fn deviation(&self, t: S, x: &[S]) -> S {
        let last = self.x.len() / self.dim - 1;
        let k = (t / self.h).floor().to_usize().unwrap_or(0).min(last - 1);
        let s = (t / self.h - S::from_usize(k).expect("index fits scalar")).max(S::zero()).min(S::one());
        let (one, two, three) = (S::one(), S::lit(2.0), S::lit(3.0));
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = two * s3 - three * s2 + one;
        let h10 = s3 - two * s2 + s;
        let h01 = -two * s3 + three * s2;
        let h11 = s3 - s2;
        let (a, b) = (k * self.dim, (k + 1) * self.dim);
        (0..self.dim).fold(S::zero(), |m, i| {
            let phi = h00 * self.x[a + i] + h10 * self.h * self.dx[a + i] + h01 * self.x[b + i] + h11 * self.h * self.dx[b + i];
            m.max((x[i] - phi).abs())
        })
    }
}

struct DeviationObserver<'a, S> {
    spec: &'a ProcessSpec<S>,
    table: &'a FlowTable<S>,
    radius: S,
    rho_cap: S,
    c_delta: S,
    sup: S,
    failures: u64,
}

impl<S: Scalar> PathObserver<S> for DeviationObserver<'_, S> {
    fn observe(&mut self, s: &Sample<'_, S>) {
        self.sup = self.sup.max(self.table.deviation(s.t, s.x));
        let rho = self.spec.rate(s.x) * self.c_delta * self.c_delta;
        if rho > self.rho_cap * (S::one() + S::lit(1e-12)) {
            self.failures += 1;
        }
    }

    fn wants_stop(&self) -> bool {
        self.sup >= self.radius
    }
}

/// Empirical `P(sup_{t≤T} |x_t − φ_t(x₀)| ≥ e^{LT}δ)` against the fluid-limit bound.
///
/// `φ` is the engine's RK4 solution of the drift field, interpolated between grid nodes.
/// The deviation is read at jump and grid samples; for flow-free specs whose flow is
/// monotone in each coordinate between jumps this is the exact supremum.
pub fn verify_ode_approx<S: Scalar>(
    spec: &ProcessSpec<S>,
    x0: &[S],
    ens: &EnsembleConfig<S>,
    q: &OdeQuery<S>,
) -> Result<McReport, McError> {
    let start = Instant::now();
    check_x0(spec, x0)?;
    ens.validate()?;
    if q.flow_steps < 2 {
        return Err(McError::Config("flow_steps must be at least 2".into()));
    }
    let horizon = ens.sim.horizon;
    let c_delta = q.c_delta.unwrap_or(spec.c_delta());
    let bound = ode_approx_bound(q.delta, q.c_rho, c_delta, horizon, q.lipschitz)?;
    let table = FlowTable::build(spec, x0, horizon, q.flow_steps)?;
    let outcomes = ens.run(|cfg| {
        let mut obs = DeviationObserver {
            spec,
            table: &table,
            radius: bound.radius,
            rho_cap: q.c_rho,
            c_delta: spec.c_delta(),
            sup: S::zero(),
            failures: 0,
        };
        let (truncated, fault) = match simulate_with(spec, x0, cfg, None, &[], &mut obs) {
            Ok(sum) => (sum.terminal.is_truncated(), false),
            Err(SimError::JumpBound { .. }) => (true, true),
            Err(e) => return Err(e.into()),
        };
        Ok((obs.sup >= bound.radius && !truncated, truncated, obs.failures + u64::from(fault), obs.sup.as_f64()))
    })?;
    let censored = outcomes.iter().filter(|o| o.1).count() as u64;
    let hits = outcomes.iter().filter(|o| o.0).count() as u64;
    let (hits, n) = ens.tally(hits, censored);
    let mut report = McReport::new("ode_approx", spec.descriptor(), ens.sim.seed, ens.n_paths);
    report.probabilities.push(ProbabilityCheck::new(
        "sup_deviation",
        hits,
        n,
        censored,
        bound.probability.value.as_f64(),
        bound.probability.vacuous,
    ));
    let max_dev = outcomes.iter().map(|o| o.3).fold(0.0, f64::max);
    let mut failures: u64 = outcomes.iter().map(|o| o.2).sum();
    if c_delta < spec.c_delta() {
        report.notes.push(format!("query assumes jump bound {c_delta} below the process's {}", spec.c_delta()));
        failures += 1;
    }
    for (k, v) in [
        ("radius", bound.radius.as_f64()),
        ("log_kappa", bound.log_kappa.as_f64()),
        ("bound_raw", bound.probability.raw.as_f64()),
        ("max_deviation", max_dev),
    ] {
        report.extras.insert(k.into(), v);
    }
    report.set_censored(censored);
    report.set_audit(failures);
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}
