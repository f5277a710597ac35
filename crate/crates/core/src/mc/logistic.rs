use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::lemmas::windowed;
use super::{EnsembleConfig, FinalObserver, McError, McReport, ProbabilityCheck};
use crate::bounds::{domain, kappa, BoundError, KappaQuery, ProbBound};
use crate::models::{sis, SisParams};
use crate::scalar::Scalar;
use crate::sim::{simulate_with, SimConfig};

/// Time for the flow of `x′ = −x(δ + λx)` to go from `x₀` down to `x`:
/// `t = δ⁻¹(ln(x₀/x) − ln((δ + λx₀)/(δ + λx)))`.
pub fn flow_time<S: Scalar>(x0: S, x: S, lambda: S, delta: S) -> Result<S, BoundError> {
    if !(delta > S::zero()) || !delta.is_finite() {
        return domain(format!("δ must be positive, got {delta}"));
    }
    if !(lambda >= S::zero()) || !lambda.is_finite() {
        return domain(format!("λ must be nonnegative, got {lambda}"));
    }
    if !(x > S::zero() && x <= x0) || !x0.is_finite() {
        return domain(format!("need 0 < x <= x0, got x = {x}, x0 = {x0}"));
    }
    Ok(((x0 / x).ln() - ((delta + lambda * x0) / (delta + lambda * x)).ln()) / delta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntermediateQuery<S> {
    pub n: u64,
    pub lambda: S,
    /// Initial density; defaults to `δ₀^{3/4}n^{−1/2}`, the middle of the admissible band.
    #[serde(default)]
    pub x0: Option<S>,
}

/// Deterministic quantities of the intermediate-phase estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntermediatePhase<S> {
    pub delta: S,
    pub delta0: S,
    pub x0: S,
    /// `x* = δ₀^{1/4}n^{−1/2}`.
    pub x_star: S,
    /// `t*` with `φ_{t*}(x₀) = x*`.
    pub t_star: S,
    /// Deviation threshold `δ₀^{1/6}n^{−1/2}`.
    pub threshold: S,
    pub eps: S,
    pub gamma: S,
    pub a: S,
    pub log_kappa: S,
    /// `6/κ^{1/2}`.
    pub bound: ProbBound<S>,
    /// Relative error of `t*` against an RK4 integration of the flow.
    pub t_star_rel_err: S,
}

impl<S: Scalar> IntermediatePhase<S> {
    pub fn compute(q: &IntermediateQuery<S>) -> Result<Self, McError> {
        let p = SisParams::new(q.n, q.lambda, true);
        let (n, l) = (p.n_scalar(), q.lambda);
        let delta = p.delta();
        if !(delta > S::zero()) || !(l > S::zero()) {
            return Err(BoundError::Domain(format!("need 0 < λ < 1, got λ = {l}")).into());
        }
        let d0 = p.delta0();
        let rn = n.sqrt();
        let x0 = q.x0.unwrap_or(d0.powf(S::lit(0.75)) / rn);
        let (lo, hi) = (d0.powf(S::lit(0.25)) / rn, d0.powf(S::lit(1.25)) / rn);
        let slack = S::lit(1e-12);
        if !(x0 >= lo * (S::one() - slack) && x0 <= hi * (S::one() + slack)) {
            return Err(BoundError::Domain(format!("x0 = {x0} outside the intermediate band [{lo}, {hi}]")).into());
        }
        let x_star = lo;
        let t_star = flow_time(x0, x_star, l, delta)?;
        let threshold = d0.powf(S::one() / S::lit(6.0)) / rn;
        let eps = threshold / S::lit(2.0);
        let gamma = n * eps * l / (S::one() + l);
        let a = (eps - S::one() / n) / S::lit(2.0);
        let k = kappa(&KappaQuery { gamma, a, c_delta: S::one() / n })?;
        let bound = ProbBound::from_log(S::lit(6.0), k.log_kappa / S::lit(2.0));
        let t_star_rel_err = rk4_time_error(&p, x0, x_star, t_star)?;
        Ok(Self { delta, delta0: d0, x0, x_star, t_star, threshold, eps, gamma, a, log_kappa: k.log_kappa, bound, t_star_rel_err })
    }
}

/// Integrates the density flow with the engine's RK4 up to `t` and converts the miss at
/// `x*` into a relative time error.
fn rk4_time_error<S: Scalar>(p: &SisParams<S>, x0: S, x_star: S, t: S) -> Result<S, McError> {
    if t == S::zero() {
        return Ok(S::zero());
    }
    let flow = sis(*p)?.drift_flow();
    let cfg = SimConfig::new(t).with_grid(t).with_ode_step(t / S::lit(20_000.0));
    let mut obs = FinalObserver::default();
    simulate_with(&flow, &[x0], &cfg, None, &[], &mut obs)?;
    Ok((obs.x[0] - x_star).abs() / (p.f(x_star).abs() * t))
}

/// Simulates the SIS density to `t*` and counts `|x_{t*} − x*| > δ₀^{1/6}n^{−1/2}`
/// against `6/κ^{1/2}`.
pub fn logistic_intermediate_phase<S: Scalar>(
    q: &IntermediateQuery<S>,
    ens: &EnsembleConfig<S>,
) -> Result<(McReport, IntermediatePhase<S>), McError> {
    let start = Instant::now();
    let ph = IntermediatePhase::compute(q)?;
    let spec = sis(SisParams::new(q.n, q.lambda, true))?;
    let outcomes = ens.run(|cfg| {
        let cfg = windowed(cfg, ph.t_star);
        let mut obs = FinalObserver::default();
        let sum = simulate_with(&spec, &[ph.x0], &cfg, None, &[], &mut obs)?;
        Ok(((obs.x[0] - ph.x_star).abs() > ph.threshold, sum.terminal.is_truncated()))
    })?;
    let censored = outcomes.iter().filter(|o| o.1).count() as u64;
    let hits = outcomes.iter().filter(|o| o.0 && !o.1).count() as u64;
    let (hits, n) = ens.tally(hits, censored);
    let mut report = McReport::new("logistic_intermediate", spec.descriptor(), ens.sim.seed, ens.n_paths);
    report.probabilities.push(ProbabilityCheck::new(
        "deviation_at_t_star",
        hits,
        n,
        censored,
        ph.bound.value.as_f64(),
        ph.bound.vacuous,
    ));
    for (k, v) in [
        ("delta0", ph.delta0),
        ("x0", ph.x0),
        ("x_star", ph.x_star),
        ("t_star", ph.t_star),
        ("threshold", ph.threshold),
        ("eps", ph.eps),
        ("gamma", ph.gamma),
        ("a", ph.a),
        ("log_kappa", ph.log_kappa),
        ("bound_raw", ph.bound.raw),
        ("t_star_rel_err", ph.t_star_rel_err),
    ] {
        report.extras.insert(k.into(), v.as_f64());
    }
    if ph.bound.vacuous {
        report.notes.push(format!("bound 6/κ^(1/2) = {} exceeds 1 at this n", ph.bound.raw));
    }
    report.set_censored(censored);
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok((report, ph))
}
