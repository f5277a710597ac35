//! Monte Carlo verification of the martingale identities and tail bounds.
//!
//! Every check runs an ensemble of independent paths in parallel. Per-path statistics are
//! collected in path order, so reports are bit-identical for a given seed whatever the
//! thread count.

mod lemmas;
mod logistic;
mod ode;
mod report;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::BoundError;
use crate::process::{transform_process, Buf, HjpError, ProcessSpec, ScalarMap};
use crate::scalar::Scalar;
use crate::sim::{simulate_with, Integrand, PathObserver, Sample, SampleKind, SimConfig, SimError};

pub use lemmas::{verify_lemma, LemmaExperiment, X0Law};
pub use logistic::{flow_time, logistic_intermediate_phase, IntermediatePhase, IntermediateQuery};
pub use ode::{verify_ode_approx, OdeQuery};
pub use report::{
    wilson, McReport, MeanCheck, MeanKind, ProbabilityCheck, Verdict, Wilson, BOUND_MARGIN, MEAN_MARGIN,
    REPORT_SCHEMA_VERSION, Z95,
};

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid ensemble: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Process(#[from] HjpError),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Treatment of truncated paths in probability checks.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Censoring {
    /// Count truncated paths as exceedances (conservative).
    #[default]
    CountAsExceedance,
    /// Drop truncated paths from the denominator.
    Exclude,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig<S> {
    pub n_paths: u64,
    /// Per-path config; path `i` uses `path_index = sim.path_index + i`.
    pub sim: SimConfig<S>,
    /// Worker threads; 0 lets rayon decide.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub censoring: Censoring,
}

impl<S: Scalar> EnsembleConfig<S> {
    pub fn new(n_paths: u64, sim: SimConfig<S>) -> Self {
        Self { n_paths, sim, threads: 0, censoring: Censoring::default() }
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = threads;
        self
    }

    pub fn with_censoring(mut self, censoring: Censoring) -> Self {
        self.censoring = censoring;
        self
    }

    pub fn validate(&self) -> Result<(), McError> {
        if self.n_paths == 0 {
            return Err(McError::Config("n_paths must be at least 1".into()));
        }
        self.sim.validate()?;
        Ok(())
    }

    /// Runs `f` on every path config and returns the results in path order.
    pub fn run<T, F>(&self, f: F) -> Result<Vec<T>, McError>
    where
        T: Send,
        F: Fn(&SimConfig<S>) -> Result<T, McError> + Sync,
    {
        self.validate()?;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(self.threads).build()?;
        let base = self.sim;
        pool.install(|| {
            (0..self.n_paths)
                .into_par_iter()
                .map(|i| f(&base.with_path_index(base.path_index.wrapping_add(i))))
                .collect()
        })
    }

    /// Denominator and exceedance count after applying the censoring policy.
    pub(crate) fn tally(&self, hits: u64, censored: u64) -> (u64, u64) {
        match self.censoring {
            Censoring::CountAsExceedance => (hits + censored, self.n_paths),
            Censoring::Exclude => (hits, self.n_paths - censored),
        }
    }
}

/// Captures the final sample of a path.
#[derive(Default)]
pub(crate) struct FinalObserver<S> {
    pub x: Vec<S>,
    pub int_drift: Vec<S>,
    pub int_diff: Vec<S>,
    pub extras: Vec<S>,
}

impl<S: Scalar> PathObserver<S> for FinalObserver<S> {
    fn observe(&mut self, s: &Sample<'_, S>) {
        if s.kind == SampleKind::Final {
            self.x = s.x.to_vec();
            self.int_drift = s.int_drift.to_vec();
            self.int_diff = s.int_diff.to_vec();
            self.extras = s.extras.to_vec();
        }
    }
}

pub(crate) fn check_coord<S: Scalar>(spec: &ProcessSpec<S>, coord: usize) -> Result<(), McError> {
    if coord >= spec.dim() {
        return Err(McError::Config(format!("coordinate {coord} out of range for dimension {}", spec.dim())));
    }
    Ok(())
}

pub(crate) fn check_x0<S: Scalar>(spec: &ProcessSpec<S>, x0: &[S]) -> Result<(), McError> {
    if x0.len() != spec.dim() {
        return Err(SimError::Dimension { expected: spec.dim(), got: x0.len() }.into());
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
        }
    }
}

/// Grid of `(λ, a, ±)` for the sample-path estimate
/// `P(±M_t ≥ a + (λ/2)e^{λc_Δ}⟨X⟩_t for some t) ≤ e^{−λa}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePathQuery<S> {
    pub lambdas: Vec<S>,
    pub a_values: Vec<S>,
    pub signs: Vec<Sign>,
    #[serde(default)]
    pub coord: usize,
}

struct EnvelopeObserver {
    coord: usize,
    x0: f64,
    /// `(sign, a, (λ/2)e^{λc})` per query point.
    combos: Vec<(f64, f64, f64)>,
    hit: Vec<bool>,
}

impl<S: Scalar> PathObserver<S> for EnvelopeObserver {
    fn observe(&mut self, s: &Sample<'_, S>) {
        let c = self.coord;
        let m = s.x[c].as_f64() - self.x0 - s.int_drift[c].as_f64();
        let qv = s.int_diff[c].as_f64();
        for (h, &(sign, a, w)) in self.hit.iter_mut().zip(&self.combos) {
            *h |= sign * m - a - w * qv >= 0.0;
        }
    }
}

/// Empirical frequency of crossing the envelope over event and grid times, per query point.
///
/// For flow-free specs `±M − W` is linear between jumps, so the pre- and post-jump samples
/// already locate its supremum and the grid can be coarse.
pub fn verify_sample_path<S: Scalar>(
    spec: &ProcessSpec<S>,
    x0: &[S],
    ens: &EnsembleConfig<S>,
    query: &SamplePathQuery<S>,
) -> Result<McReport, McError> {
    let start = Instant::now();
    check_x0(spec, x0)?;
    check_coord(spec, query.coord)?;
    if query.lambdas.is_empty() || query.a_values.is_empty() || query.signs.is_empty() {
        return Err(McError::Config("λ, a and sign grids must be non-empty".into()));
    }
    let c = spec.c_delta().as_f64();
    if !c.is_finite() {
        return Err(McError::Config("sample-path check needs a finite jump bound".into()));
    }
    let mut combos = Vec::new();
    let mut labels = Vec::new();
    for &l in &query.lambdas {
        for &a in &query.a_values {
            let (l, a) = (l.as_f64(), a.as_f64());
            if !(l > 0.0 && a > 0.0) {
                return Err(McError::Config(format!("λ and a must be positive, got λ = {l}, a = {a}")));
            }
            for &s in &query.signs {
                combos.push((s.factor(), a, 0.5 * l * (l * c).exp()));
                labels.push((format!("lambda={l},a={a},sign={}", s.symbol()), (-l * a).exp()));
            }
        }
    }
    let x0c = x0[query.coord].as_f64();
    let outcomes = ens.run(|cfg| {
        let mut obs = EnvelopeObserver { coord: query.coord, x0: x0c, combos: combos.clone(), hit: vec![false; combos.len()] };
        match simulate_with(spec, x0, cfg, None, &[], &mut obs) {
            Ok(sum) => Ok((obs.hit, sum.terminal.is_truncated(), false)),
            Err(SimError::JumpBound { .. }) => Ok((obs.hit, true, true)),
            Err(e) => Err(e.into()),
        }
    })?;
    let censored = outcomes.iter().filter(|o| o.1).count() as u64;
    let audit = outcomes.iter().filter(|o| o.2).count() as u64;
    let mut report = McReport::new("sample_path", spec.descriptor(), ens.sim.seed, ens.n_paths);
    for (k, (label, bound)) in labels.into_iter().enumerate() {
        let hits = outcomes.iter().filter(|o| o.0[k] && !o.1).count() as u64;
        let (hits, n) = ens.tally(hits, censored);
        report.probabilities.push(ProbabilityCheck::new(label, hits, n, censored, bound, false));
    }
    report.set_censored(censored);
    report.set_audit(audit);
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Which terminal statistics a martingale run reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MartingaleQuery<S> {
    /// Mean of `M_T` against 0.
    pub first: bool,
    /// Mean of `M_T² − ⟨X⟩_T` against 0.
    pub quadratic: bool,
    /// `λ` for the compensated exponential `E_T(X, λ)`.
    pub lambda: Option<S>,
    /// Two-sided for a true martingale, at-most-1 for the supermartingale check.
    pub exp_kind: MeanKind,
    #[serde(default)]
    pub coord: usize,
}

/// Slack for statistics that are exact up to quadrature and integrator error.
const INTEGRATOR_TOL: f64 = 1e-8;

/// Terminal means of `M_T`, `M_T² − ⟨X⟩_T` and `E_T(X, λ)` over the ensemble.
///
/// `E_T(X, λ) = exp(λ(X_T − X₀) − ∫ e^{−λX}μ(e^{λX}) ds)`, with the integrand taken from the
/// drift of the transformed process `e^{λX}`. Truncated paths are excluded from the
/// means and counted as censored.
pub fn martingale_check<S: Scalar>(
    spec: &ProcessSpec<S>,
    x0: &[S],
    ens: &EnsembleConfig<S>,
    query: &MartingaleQuery<S>,
) -> Result<McReport, McError> {
    let start = Instant::now();
    check_x0(spec, x0)?;
    check_coord(spec, query.coord)?;
    let c = query.coord;
    let transformed = match query.lambda {
        Some(l) if !l.is_finite() => return Err(McError::Config(format!("λ must be finite, got {l}"))),
        Some(l) => Some((l, transform_process(spec, &ScalarMap::exp_scaled(l)))),
        None => None,
    };
    let integrand = transformed.as_ref().map(|(l, tp)| {
        let (l, d) = (*l, spec.dim());
        move |x: &[S]| {
            let mut mu: Buf<S> = Buf::from_elem(S::zero(), d);
            tp.drift_into(x, &mut mu);
            mu[c] * (-l * x[c]).exp()
        }
    });
    let extras: Vec<Integrand<S>> = integrand.iter().map(|g| g as Integrand<S>).collect();
    let outcomes = ens.run(|cfg| {
        let mut obs = FinalObserver::default();
        let sum = simulate_with(spec, x0, cfg, None, &extras, &mut obs)?;
        let m = (obs.x[c] - x0[c] - obs.int_drift[c]).as_f64();
        let q = m * m - obs.int_diff[c].as_f64();
        let e = match query.lambda {
            Some(l) => ((l * (obs.x[c] - x0[c])).as_f64() - obs.extras[0].as_f64()).exp(),
            None => 0.0,
        };
        Ok((m, q, e, sum.terminal.is_truncated()))
    })?;
    let kept: Vec<_> = outcomes.iter().filter(|o| !o.3).collect();
    let censored = (outcomes.len() - kept.len()) as u64;
    let mut report = McReport::new("martingale", spec.descriptor(), ens.sim.seed, ens.n_paths);
    if query.first {
        let v: Vec<f64> = kept.iter().map(|o| o.0).collect();
        report.means.push(MeanCheck::from_samples("M_T", &v, 0.0, MeanKind::TwoSided, INTEGRATOR_TOL));
    }
    if query.quadratic {
        let v: Vec<f64> = kept.iter().map(|o| o.1).collect();
        report.means.push(MeanCheck::from_samples("M_T^2-<X>_T", &v, 0.0, MeanKind::TwoSided, INTEGRATOR_TOL));
    }
    if let Some(l) = query.lambda {
        let v: Vec<f64> = kept.iter().map(|o| o.2).collect();
        let check = MeanCheck::from_samples(format!("E_T(lambda={l})"), &v, 1.0, query.exp_kind, INTEGRATOR_TOL);
        if check.non_finite > 0 {
            report.notes.push(format!("{} paths overflowed in E_T", check.non_finite));
        }
        report.means.push(check);
    }
    report.set_censored(censored);
    report.runtime_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Mean of `E_T(X, λ)` against the supermartingale bound `≤ 1`.
pub fn exponential_martingale_check<S: Scalar>(
    spec: &ProcessSpec<S>,
    x0: &[S],
    ens: &EnsembleConfig<S>,
    lambda: S,
) -> Result<McReport, McError> {
    let q = MartingaleQuery { first: false, quadratic: false, lambda: Some(lambda), exp_kind: MeanKind::AtMost, coord: 0 };
    let mut r = martingale_check(spec, x0, ens, &q)?;
    r.check = "exponential_martingale".into();
    Ok(r)
}

/// Mean of `M_T² − ⟨X⟩_T` against 0.
pub fn quadratic_martingale_check<S: Scalar>(
    spec: &ProcessSpec<S>,
    x0: &[S],
    ens: &EnsembleConfig<S>,
) -> Result<McReport, McError> {
    let q = MartingaleQuery { first: false, quadratic: true, lambda: None, exp_kind: MeanKind::TwoSided, coord: 0 };
    let mut r = martingale_check(spec, x0, ens, &q)?;
    r.check = "quadratic_martingale".into();
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{birth_death, linear_flow, poisson_counter};

    fn ens(n: u64, horizon: f64, seed: u64) -> EnsembleConfig<f64> {
        EnsembleConfig::new(n, SimConfig::new(horizon).with_grid(horizon).with_seed(seed))
    }

    #[test]
    fn poisson_moments() {
        let spec = poisson_counter(1.0).unwrap();
        let q = MartingaleQuery { first: true, quadratic: true, lambda: Some(1.0), exp_kind: MeanKind::TwoSided, coord: 0 };
        let r = martingale_check(&spec, &[0.0], &ens(20_000, 1.0, 3), &q).unwrap();
        assert!(r.all_respected(), "{:?}", r.means);
        assert_eq!(r.means.len(), 3);
    }

    #[test]
    fn exponential_is_one_at_zero_lambda_and_on_flows() {
        let spec = birth_death(2.0, 1.0).unwrap();
        let r = exponential_martingale_check(&spec, &[0.0], &ens(200, 1.0, 1), 0.0).unwrap();
        assert_eq!(r.means[0].mean, 1.0);
        assert_eq!(r.means[0].stderr, 0.0);
        let flow = linear_flow(-0.5).unwrap();
        let e = EnsembleConfig::new(4, SimConfig::new(2.0).with_grid(0.01));
        let r = exponential_martingale_check(&flow, &[1.0], &e, 0.7).unwrap();
        assert!((r.means[0].mean - 1.0).abs() < 1e-10);
        let r = quadratic_martingale_check(&flow, &[1.0], &e).unwrap();
        assert!(r.means[0].mean.abs() < 1e-10);
        assert!(r.all_respected());
    }

    #[test]
    fn sample_path_poisson() {
        let spec = poisson_counter(1.0).unwrap();
        let q = SamplePathQuery { lambdas: vec![1.0], a_values: vec![2.0, 1e6], signs: vec![Sign::Plus, Sign::Minus], coord: 0 };
        let r = verify_sample_path(&spec, &[0.0], &ens(5_000, 10.0, 9), &q).unwrap();
        assert!(r.all_respected());
        assert_eq!(r.probabilities.len(), 4);
        assert_eq!(r.probabilities[2].exceedances, 0);
        assert_eq!(r.probabilities[3].exceedances, 0);
        assert!(r.probabilities[0].exceedances > 0);
        let empty = SamplePathQuery { lambdas: vec![], a_values: vec![1.0], signs: vec![Sign::Plus], coord: 0 };
        assert!(verify_sample_path(&spec, &[0.0], &ens(10, 1.0, 0), &empty).is_err());
    }

    #[test]
    fn deterministic_across_threads() {
        let spec = birth_death(2.0, 1.0).unwrap();
        let q = MartingaleQuery { first: true, quadratic: true, lambda: Some(0.5), exp_kind: MeanKind::TwoSided, coord: 0 };
        let a = martingale_check(&spec, &[0.0], &ens(3_000, 2.0, 5).with_threads(1), &q).unwrap();
        let b = martingale_check(&spec, &[0.0], &ens(3_000, 2.0, 5).with_threads(4), &q).unwrap();
        assert_eq!(a.canonical(), b.canonical());
    }

    #[test]
    fn censoring_policies() {
        let e = ens(10, 1.0, 0);
        assert_eq!(e.tally(2, 3), (5, 10));
        assert_eq!(e.with_censoring(Censoring::Exclude).tally(2, 3), (2, 7));
        assert!(EnsembleConfig::new(0, SimConfig::new(1.0)).validate().is_err());
    }
}
