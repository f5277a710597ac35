use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{check_x0, EnsembleConfig, McError, McReport, ProbabilityCheck};
use crate::bounds::{drift_barrier_bound, linear_drift_bound, LemmaId, LemmaQuery, ProbBound};
use crate::process::{Buf, ProcessSpec};
use crate::rng::PathRng;
use crate::scalar::Scalar;
use crate::sim::{simulate_with, PathObserver, Sample, SampleKind, SimConfig, SimError, Terminal};

/// Iteration cap for the long-horizon drift barrier window `⌊κ^{1/2}⌋ t₀`.
const MAX_BARRIER_ITERATIONS: f64 = 1000.0;

/// Law of the initial state of a one-dimensional experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum X0Law<S> {
    Fixed { value: S },
    /// Uniform on the integers `lo..=hi`, drawn from the path's auxiliary stream.
    UniformInt { lo: i64, hi: i64 },
}

impl<S: Scalar> X0Law<S> {
    fn sample(&self, seed: u64, path_index: u64) -> S {
        match *self {
            X0Law::Fixed { value } => value,
            X0Law::UniformInt { lo, hi } => {
                let span = (hi - lo + 1) as f64;
                let k = ((PathRng::auxiliary(seed, path_index).uniform() * span).ceil() - 1.0).clamp(0.0, span - 1.0);
                S::from_f64(lo as f64 + k).expect("integer fits scalar")
            }
        }
    }

    fn validate(&self) -> Result<(), McError> {
        match *self {
            X0Law::Fixed { value } if !value.is_finite() => Err(McError::Config(format!("x0 must be finite, got {value}"))),
            X0Law::UniformInt { lo, hi } if lo > hi => Err(McError::Config(format!("empty x0 range {lo}..={hi}"))),
            _ => Ok(()),
        }
    }
}

/// A lemma query together with the pieces needed to observe its event on paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaExperiment<S> {
    pub query: LemmaQuery<S>,
    /// Defaults to the query's `x0` (linear drift), `x/2` (drift barrier) or 0.
    #[serde(default)]
    pub x0: Option<X0Law<S>>,
    /// `ℓ` in `μ ≤ ℓX` (linear drift only).
    #[serde(default)]
    pub growth_rate: Option<S>,
    /// Observation window (linear drift and diffusive barrier).
    #[serde(default)]
    pub horizon: Option<S>,
    /// Drift barrier: use `k = ⌊κ^{1/2}⌋`, capped at 10³, instead of the query's `k`.
    #[serde(default)]
    pub long_horizon: bool,
}

/// Hypotheses audited along paths, with the event geometry.
#[derive(Clone, Copy)]
enum Hyp<S> {
    LinearDrift { ell: S, y: S, c_opt: Option<S> },
    DriftBarrier { x: S, mu: S, c_mu: S, sigma2: S },
    DriftEscape { x: S, mu: S, sigma2: S },
    DiffusiveBarrier { x: S },
    DiffusiveEscape { x: S, c_mu: S, sigma2: S, rho: S },
}

fn le<S: Scalar>(a: S, b: S) -> bool {
    a <= b + S::lit(1e-12) * (a.abs() + b.abs())
}

struct LemmaObserver<'a, S: Scalar> {
    spec: &'a ProcessSpec<S>,
    hyp: Hyp<S>,
    x0: S,
    pre: S,
    hit: bool,
    failures: u64,
    qvar_end: S,
    mu: Buf<S>,
    s2: Buf<S>,
}

impl<S: Scalar> LemmaObserver<'_, S> {
    fn audit(&mut self, s: &Sample<'_, S>) -> bool {
        let x = s.x[0];
        let q = self.spec.moments_into(s.x, &mut self.mu, &mut self.s2);
        let (mu, s2) = (self.mu[0], self.s2[0]);
        match self.hyp {
            Hyp::LinearDrift { ell, c_opt, .. } => {
                let shape = match c_opt {
                    Some(c) => le(s2, c * mu),
                    None => s.kind != SampleKind::PostJump || x >= self.pre,
                };
                x >= S::zero() && le(mu, ell * x) && shape
            }
            Hyp::DriftBarrier { x: b, mu: m, c_mu, sigma2 } => {
                !(x > S::zero() && x < b) || (le(mu, -m) && le(mu.abs(), c_mu) && le(s2, sigma2))
            }
            Hyp::DriftEscape { x: b, mu: m, sigma2 } => x >= b || (le(m, mu) && le(s2, sigma2)),
            Hyp::DiffusiveBarrier { .. } => self.hit || le(mu, S::zero()),
            Hyp::DiffusiveEscape { x: b, c_mu, sigma2, rho } => {
                let c = self.spec.c_delta();
                x.abs() >= b || (le(mu.abs(), c_mu) && le(sigma2, s2) && le(q * c * c, rho))
            }
        }
    }
}

impl<S: Scalar> PathObserver<S> for LemmaObserver<'_, S> {
    fn observe(&mut self, s: &Sample<'_, S>) {
        if !self.audit(s) {
            self.failures += 1;
        }
        match self.hyp {
            Hyp::LinearDrift { ell, y, .. } => {
                if s.x[0] >= y * self.x0 * (ell * s.t).exp() {
                    self.hit = true;
                }
            }
            Hyp::DiffusiveBarrier { x } => self.hit |= s.x[0] >= x,
            _ => {}
        }
        if s.kind == SampleKind::PreJump {
            self.pre = s.x[0];
        }
        if s.kind == SampleKind::Final {
            self.qvar_end = s.int_diff[0];
        }
    }

    fn wants_stop(&self) -> bool {
        matches!(self.hyp, Hyp::LinearDrift { .. }) && self.hit
    }
}

struct Plan<S> {
    hyp: Hyp<S>,
    horizon: S,
    law: X0Law<S>,
    /// Bound shared by every path; `None` for the per-path linear drift kernel.
    bound: Option<ProbBound<S>>,
    /// Jump bound the query assumes.
    c_assumed: S,
    extras: Vec<(&'static str, S)>,
}

fn plan<S: Scalar>(e: &LemmaExperiment<S>) -> Result<Plan<S>, McError> {
    let need = |v: Option<S>, what: &str| v.ok_or_else(|| McError::Config(format!("{what} is required for this lemma")));
    let zero = X0Law::Fixed { value: S::zero() };
    let p = match e.query {
        LemmaQuery::LinearDrift { y, x0, c_delta, c_opt } => {
            let ell = need(e.growth_rate, "growth_rate")?;
            Plan {
                hyp: Hyp::LinearDrift { ell, y, c_opt },
                horizon: need(e.horizon, "horizon")?,
                law: e.x0.unwrap_or(X0Law::Fixed { value: x0 }),
                bound: None,
                c_assumed: c_delta,
                extras: vec![],
            }
        }
        LemmaQuery::DriftBarrier { x, c, mu, c_mu, sigma2, k } => {
            let b = drift_barrier_bound(x, c, mu, c_mu, sigma2, k)?;
            let t0 = b.t0.expect("drift barrier has t0");
            let (kk, bound) = if e.long_horizon {
                let root = (b.log_kappa / S::lit(2.0)).exp().floor().max(S::one());
                let cap = S::lit(MAX_BARRIER_ITERATIONS);
                if root > cap {
                    (cap, ProbBound::from_log(S::lit(3.0) * cap, b.log_kappa))
                } else {
                    (root, b.long_horizon.expect("drift barrier has a long horizon").1)
                }
            } else {
                (S::from_u64(k).expect("k fits scalar"), b.probability)
            };
            Plan {
                hyp: Hyp::DriftBarrier { x, mu, c_mu, sigma2 },
                horizon: kk * t0,
                law: e.x0.unwrap_or(X0Law::Fixed { value: x / S::lit(2.0) }),
                bound: Some(bound),
                c_assumed: c,
                extras: vec![("log_kappa", b.log_kappa), ("t0", t0), ("k", kk), ("gamma", b.gamma.unwrap())],
            }
        }
        q @ LemmaQuery::DriftEscape { x, mu, sigma2, c_delta, .. } => {
            let b = q.evaluate()?;
            Plan {
                hyp: Hyp::DriftEscape { x, mu, sigma2 },
                horizon: b.horizon.expect("drift escape has a horizon"),
                law: e.x0.unwrap_or(zero),
                bound: Some(b.probability),
                c_assumed: c_delta,
                extras: vec![("log_kappa", b.log_kappa), ("gamma", b.gamma.unwrap())],
            }
        }
        q @ LemmaQuery::DiffusiveBarrier { x, c_delta, .. } => {
            let b = q.evaluate()?;
            Plan {
                hyp: Hyp::DiffusiveBarrier { x },
                horizon: need(e.horizon, "horizon")?,
                law: e.x0.unwrap_or(zero),
                bound: Some(b.probability),
                c_assumed: c_delta,
                extras: vec![("log_kappa", b.log_kappa), ("gamma", b.gamma.unwrap())],
            }
        }
        q @ LemmaQuery::DiffusiveEscape { x, c_mu, sigma2, rho, c_delta, .. } => {
            let b = q.evaluate()?;
            Plan {
                hyp: Hyp::DiffusiveEscape { x, c_mu, sigma2, rho },
                horizon: b.horizon.expect("diffusive escape has a horizon"),
                law: e.x0.unwrap_or(zero),
                bound: Some(b.probability),
                c_assumed: c_delta,
                extras: vec![("log_kappa", b.log_kappa), ("gamma", b.gamma.unwrap())],
            }
        }
    };
    p.law.validate()?;
    if !(p.horizon > S::zero()) || !p.horizon.is_finite() {
        return Err(McError::Config(format!("lemma horizon must be positive and finite, got {}", p.horizon)));
    }
    Ok(p)
}

fn start_ok<S: Scalar>(q: &LemmaQuery<S>, x0: S) -> bool {
    match *q {
        LemmaQuery::LinearDrift { .. } => x0 > S::zero(),
        LemmaQuery::DriftBarrier { x, .. } => x0 <= x / S::lit(2.0),
        LemmaQuery::DiffusiveBarrier { .. } => x0 <= S::zero(),
        LemmaQuery::DriftEscape { .. } | LemmaQuery::DiffusiveEscape { .. } => x0 >= S::zero(),
    }
}

/// Restricts a path config to `horizon`, keeping the grid and step no coarser than it.
pub(crate) fn windowed<S: Scalar>(cfg: &SimConfig<S>, horizon: S) -> SimConfig<S> {
    let mut c = *cfg;
    c.horizon = horizon;
    c.dt_grid = c.dt_grid.min(horizon);
    c.ode_step = c.ode_step.min(c.dt_grid);
    c
}

struct Outcome {
    event: bool,
    censored: bool,
    failures: u64,
    kernel: f64,
}

/// Empirical probability of a lemma's event against its bound, with hypothesis audits.
///
/// Drift and diffusivity inequalities are checked at every grid and jump sample inside the
/// region where the lemma assumes them; any failure marks the report invalid. The linear
/// drift bound is averaged over the sampled initial states. Its event, and the diffusive
/// barrier's, are read at the recorded samples (exact for flow-free specs); the other
/// events use a localized stopping rule.
pub fn verify_lemma<S: Scalar>(
    spec: &ProcessSpec<S>,
    ens: &EnsembleConfig<S>,
    exp: &LemmaExperiment<S>,
) -> Result<McReport, McError> {
    let start = Instant::now();
    if spec.dim() != 1 {
        return Err(McError::Config("lemma experiments need a one-dimensional process".into()));
    }
    let plan = plan(exp)?;
    let id = exp.query.id();
    let stop_at = |x: &[S]| match plan.hyp {
        Hyp::DriftBarrier { x: b, .. } | Hyp::DriftEscape { x: b, .. } => x[0] >= b,
        Hyp::DiffusiveEscape { x: b, .. } => x[0].abs() >= b,
        _ => false,
    };
    let stop: Option<&(dyn Fn(&[S]) -> bool + Sync)> =
        matches!(id, LemmaId::DriftBarrier | LemmaId::DriftEscape | LemmaId::DiffusiveEscape).then_some(&stop_at);
    let c_eff = match exp.query {
        LemmaQuery::LinearDrift { c_delta, c_opt, .. } => c_opt.map_or(c_delta, |c| c.max(c_delta)),
        _ => S::zero(),
    };
    let outcomes = ens.run(|cfg| {
        let cfg = windowed(cfg, plan.horizon);
        let x0 = plan.law.sample(cfg.seed, cfg.path_index);
        check_x0(spec, &[x0])?;
        let mut obs = LemmaObserver {
            spec,
            hyp: plan.hyp,
            x0,
            pre: x0,
            hit: false,
            failures: u64::from(!start_ok(&exp.query, x0)),
            qvar_end: S::zero(),
            mu: Buf::from_elem(S::zero(), 1),
            s2: Buf::from_elem(S::zero(), 1),
        };
        let (terminal, jump_fault) = match simulate_with(spec, &[x0], &cfg, stop, &[], &mut obs) {
            Ok(sum) => (sum.terminal, false),
            Err(SimError::JumpBound { .. }) => (Terminal::TruncatedNorm, true),
            Err(e) => return Err(e.into()),
        };
        let mut failures = obs.failures + u64::from(jump_fault);
        if let LemmaQuery::DiffusiveBarrier { qvar_t, .. } = exp.query {
            if !jump_fault && !le(obs.qvar_end, qvar_t) {
                failures += 1;
            }
        }
        let event = match id {
            LemmaId::LinearDrift | LemmaId::DiffusiveBarrier => obs.hit,
            LemmaId::DriftBarrier => terminal == Terminal::StoppedByPredicate,
            LemmaId::DriftEscape | LemmaId::DiffusiveEscape => terminal == Terminal::Horizon,
        };
        let kernel = match id {
            LemmaId::LinearDrift => {
                let y = match exp.query {
                    LemmaQuery::LinearDrift { y, .. } => y,
                    _ => unreachable!(),
                };
                if x0 > S::zero() {
                    linear_drift_bound(y, x0, c_eff)?.probability.value.as_f64()
                } else {
                    1.0
                }
            }
            _ => 0.0,
        };
        Ok(Outcome { event: event && !terminal.is_truncated(), censored: terminal.is_truncated(), failures, kernel })
    })?;

    let name = format!("lemma_{}", serde_json::to_value(id).expect("id serializes").as_str().unwrap_or("?"));
    let mut report = McReport::new(&name, spec.descriptor(), ens.sim.seed, ens.n_paths);
    let censored = outcomes.iter().filter(|o| o.censored).count() as u64;
    let hits = outcomes.iter().filter(|o| o.event).count() as u64;
    let (hits, n) = ens.tally(hits, censored);
    let bound = match plan.bound {
        Some(b) => b,
        None => {
            let mean = outcomes.iter().map(|o| o.kernel).sum::<f64>() / outcomes.len() as f64;
            ProbBound::new(S::lit(mean))
        }
    };
    report.probabilities.push(ProbabilityCheck::new(
        "event",
        hits,
        n,
        censored,
        bound.value.as_f64(),
        bound.vacuous,
    ));
    report.extras.insert("horizon".into(), plan.horizon.as_f64());
    report.extras.insert("bound_raw".into(), bound.raw.as_f64());
    for (k, v) in &plan.extras {
        report.extras.insert((*k).into(), v.as_f64());
    }
    report.set_censored(censored);
    let mut failures: u64 = outcomes.iter().map(|o| o.failures).sum();
    if plan.c_assumed < spec.c_delta() {
        report.notes.push(format!("query assumes jump bound {} below the process's {}", plan.c_assumed, spec.c_delta()));
        failures += 1;
    }
    report.set_audit(failures);
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{birth_death, lattice_walk, yule};

    fn ens(n: u64, seed: u64) -> EnsembleConfig<f64> {
        EnsembleConfig::new(n, SimConfig::new(1.0).with_grid(1.0).with_seed(seed))
    }

    #[test]
    fn linear_drift_on_yule() {
        let spec = yule(1.0).unwrap();
        let exp = LemmaExperiment {
            query: LemmaQuery::LinearDrift { y: 3.0, x0: 4.0, c_delta: 1.0, c_opt: None },
            x0: Some(X0Law::UniformInt { lo: 2, hi: 6 }),
            growth_rate: Some(1.0),
            horizon: Some(2.0),
            long_horizon: false,
        };
        let r = verify_lemma(&spec, &ens(2_000, 1), &exp).unwrap();
        assert!(!r.invalid, "{:?}", r.notes);
        assert!(r.all_respected());
        let expect = (2..=6).map(|k| (-(k as f64) / 4.0).exp()).sum::<f64>() / 5.0;
        assert!((r.probabilities[0].bound - expect).abs() < 0.02);
    }

    #[test]
    fn audits_catch_violated_hypotheses() {
        // Positive drift violates the drift barrier's μ ≤ −μ̄.
        let spec = lattice_walk(0.05, 300.0, 100.0).unwrap();
        let exp = LemmaExperiment {
            query: LemmaQuery::DriftBarrier { x: 1.0, c: 0.05, mu: 10.0, c_mu: 10.0, sigma2: 1.0, k: 1 },
            x0: None,
            growth_rate: None,
            horizon: None,
            long_horizon: false,
        };
        let r = verify_lemma(&spec, &ens(50, 2), &exp).unwrap();
        assert!(r.invalid);
        assert!(!r.all_respected());
        // Yule jumps are 1 but the query claims 0.5.
        let exp = LemmaExperiment {
            query: LemmaQuery::LinearDrift { y: 3.0, x0: 4.0, c_delta: 0.5, c_opt: None },
            x0: None,
            growth_rate: Some(1.0),
            horizon: Some(1.0),
            long_horizon: false,
        };
        assert!(verify_lemma(&yule(1.0).unwrap(), &ens(10, 0), &exp).unwrap().invalid);
    }

    #[test]
    fn diffusive_barrier_on_symmetric_walk() {
        let spec = birth_death(1.0, 1.0).unwrap();
        let exp = LemmaExperiment {
            query: LemmaQuery::DiffusiveBarrier { x: 6.0, qvar_t: 8.0, c_delta: 1.0 },
            x0: None,
            growth_rate: None,
            horizon: Some(4.0),
            long_horizon: false,
        };
        let r = verify_lemma(&spec, &ens(4_000, 3), &exp).unwrap();
        assert!(r.all_respected(), "{r:?}");
        assert!(r.probabilities[0].exceedances > 0);
    }

    #[test]
    fn missing_fields_are_config_errors() {
        let exp = LemmaExperiment {
            query: LemmaQuery::DiffusiveBarrier { x: 6.0, qvar_t: 8.0, c_delta: 1.0 },
            x0: None,
            growth_rate: None,
            horizon: None,
            long_horizon: false,
        };
        assert!(matches!(verify_lemma(&birth_death(1.0, 1.0).unwrap(), &ens(10, 0), &exp), Err(McError::Config(_))));
    }

    #[test]
    fn uniform_int_law_covers_range() {
        let law = X0Law::<f64>::UniformInt { lo: -1, hi: 1 };
        let mut seen = [0u32; 3];
        for i in 0..3000 {
            let v = law.sample(5, i);
            seen[(v + 1.0) as usize] += 1;
        }
        assert!(seen.iter().all(|&c| c > 900));
    }
}
