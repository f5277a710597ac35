//! Closed-form bounds of the five first-passage and growth estimates.

use serde::{Deserialize, Serialize};

use super::{domain, kappa, lambda_c, BoundError, KappaQuery, ProbBound};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LemmaId {
    LinearDrift,
    DriftBarrier,
    DriftEscape,
    DiffusiveBarrier,
    DiffusiveEscape,
}

/// Parameters of one of the five estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "lemma", rename_all = "snake_case", deny_unknown_fields)]
pub enum LemmaQuery<S> {
    /// Growth of a non-decreasing process with `μ ≤ ℓ(t)X`: `P(sup Y ≥ y)`.
    /// `c_opt` replaces the non-decreasing hypothesis by `σ² ≤ Cμ`.
    LinearDrift { y: S, x0: S, c_delta: S, #[serde(default)] c_opt: Option<S> },
    /// `P(sup_{t < k t₀} X_t ≥ x | X₀ ≤ x/2)` under drift `≤ −μ` on `(0, x)`.
    DriftBarrier { x: S, c: S, mu: S, c_mu: S, sigma2: S, k: u64 },
    /// `P(sup_{t ≤ T} X_t < x | X₀ ≥ 0)` under drift `≥ μ`.
    DriftEscape { x: S, mu: S, sigma2: S, b: S, eps: S, c_delta: S },
    /// `P(sup_{t ≤ T} X_t ≥ x | X₀ ≤ 0)` under drift `≤ 0`.
    DiffusiveBarrier { x: S, qvar_t: S, c_delta: S },
    /// `P(sup_{t ≤ T} |X_t| < x | X₀ ≥ 0)` under `σ² ≥ 4xC_μ` and `ρ ≤ ρ̄`.
    DiffusiveEscape { x: S, c_mu: S, sigma2: S, rho: S, b: S, c_delta: S },
}

/// Evaluated estimate. `horizon` is the time window of the event where the estimate
/// fixes one (`k t₀`, or `T`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaBound<S> {
    pub lemma: LemmaId,
    pub gamma: Option<S>,
    pub a: Option<S>,
    pub log_kappa: S,
    pub horizon: Option<S>,
    pub probability: ProbBound<S>,
    /// Drift barrier only: `t₀ = (x − c)/20C_μ`.
    pub t0: Option<S>,
    /// Drift barrier only: the tighter `(x − c)/(4(C_μ + 2λ_c(μ/σ²)σ²))`.
    pub t0_tight: Option<S>,
    /// Drift barrier only: `(⌊κ^{1/2}⌋ t₀, 3/κ^{1/2})`.
    pub long_horizon: Option<(S, ProbBound<S>)>,
}

impl<S: Scalar> LemmaBound<S> {
    fn basic(lemma: LemmaId, log_kappa: S, probability: ProbBound<S>) -> Self {
        Self {
            lemma,
            gamma: None,
            a: None,
            log_kappa,
            horizon: None,
            probability,
            t0: None,
            t0_tight: None,
            long_horizon: None,
        }
    }
}

impl<S: Scalar> LemmaQuery<S> {
    pub fn id(&self) -> LemmaId {
        match self {
            LemmaQuery::LinearDrift { .. } => LemmaId::LinearDrift,
            LemmaQuery::DriftBarrier { .. } => LemmaId::DriftBarrier,
            LemmaQuery::DriftEscape { .. } => LemmaId::DriftEscape,
            LemmaQuery::DiffusiveBarrier { .. } => LemmaId::DiffusiveBarrier,
            LemmaQuery::DiffusiveEscape { .. } => LemmaId::DiffusiveEscape,
        }
    }

    pub fn evaluate(&self) -> Result<LemmaBound<S>, BoundError> {
        match *self {
            LemmaQuery::LinearDrift { y, x0, c_delta, c_opt } => {
                let c_eff = c_opt.map_or(c_delta, |c| c.max(c_delta));
                linear_drift_bound(y, x0, c_eff)
            }
            LemmaQuery::DriftBarrier { x, c, mu, c_mu, sigma2, k } => drift_barrier_bound(x, c, mu, c_mu, sigma2, k),
            LemmaQuery::DriftEscape { x, mu, sigma2, b, eps, c_delta } => {
                drift_escape_bound(x, mu, sigma2, b, eps, c_delta)
            }
            LemmaQuery::DiffusiveBarrier { x, qvar_t, c_delta } => diffusive_barrier_bound(x, qvar_t, c_delta),
            LemmaQuery::DiffusiveEscape { x, c_mu, sigma2, rho, b, c_delta } => {
                diffusive_escape_bound(x, c_mu, sigma2, rho, b, c_delta)
            }
        }
    }
}

fn require(ok: bool, what: &str) -> Result<(), BoundError> {
    if ok {
        Ok(())
    } else {
        domain(format!("precondition {what} violated"))
    }
}

/// `e^{−(y−2)x₀/4c}` for a deterministic `x₀`; `1` for `y < 2`.
pub fn linear_drift_bound<S: Scalar>(y: S, x0: S, c_eff: S) -> Result<LemmaBound<S>, BoundError> {
    require(x0 > S::zero(), "x0 > 0")?;
    require(c_eff > S::zero(), "c_eff > 0")?;
    require(!y.is_nan(), "y is a number")?;
    let two = S::lit(2.0);
    if y < two {
        return Ok(LemmaBound::basic(LemmaId::LinearDrift, S::zero(), ProbBound::trivial()));
    }
    let exponent = (y - two) * x0 / (S::lit(4.0) * c_eff);
    Ok(LemmaBound::basic(LemmaId::LinearDrift, exponent, ProbBound::from_log(S::one(), exponent)))
}

/// `t₀ = (x−c)/20C_μ`, `κ = κ_c(μ/σ², (x−c)/2)`, bound `3k/κ` on `[0, k t₀)`.
pub fn drift_barrier_bound<S: Scalar>(
    x: S,
    c: S,
    mu: S,
    c_mu: S,
    sigma2: S,
    k: u64,
) -> Result<LemmaBound<S>, BoundError> {
    require(c >= S::zero(), "c >= 0")?;
    require(x > c, "x > c")?;
    require(mu > S::zero(), "mu > 0")?;
    require(mu <= c_mu, "mu <= C_mu")?;
    require(sigma2 > S::zero(), "sigma2 > 0")?;
    require(k >= 1, "k >= 1")?;
    let two = S::lit(2.0);
    let gamma = mu / sigma2;
    let a = (x - c) / two;
    let kap = kappa(&KappaQuery { gamma, a, c_delta: c })?;
    let t0 = (x - c) / (S::lit(20.0) * c_mu);
    let t0_tight = (x - c) / (S::lit(4.0) * (c_mu + two * lambda_c(gamma, c)? * sigma2));
    let kf = S::from_u64(k).expect("k representable");
    let half_log = kap.log_kappa / two;
    let long = (half_log.exp().floor() * t0, ProbBound::from_log(S::lit(3.0), half_log));
    Ok(LemmaBound {
        lemma: LemmaId::DriftBarrier,
        gamma: Some(gamma),
        a: Some(a),
        log_kappa: kap.log_kappa,
        horizon: Some(kf * t0),
        probability: ProbBound::from_log(S::lit(3.0) * kf, kap.log_kappa),
        t0: Some(t0),
        t0_tight: Some(t0_tight),
        long_horizon: Some(long),
    })
}

/// `T = (1+b)x/((1−ε)μ)`, `κ = κ_c(εμ/σ², bx)`, bound `1/κ`.
pub fn drift_escape_bound<S: Scalar>(
    x: S,
    mu: S,
    sigma2: S,
    b: S,
    eps: S,
    c_delta: S,
) -> Result<LemmaBound<S>, BoundError> {
    require(eps > S::zero() && eps < S::one(), "0 < eps < 1")?;
    require(b > S::zero(), "b > 0")?;
    require(x > S::zero(), "x > 0")?;
    require(mu > S::zero(), "mu > 0")?;
    require(sigma2 > S::zero(), "sigma2 > 0")?;
    require(c_delta >= S::zero(), "c_delta >= 0")?;
    let gamma = eps * mu / sigma2;
    let a = b * x;
    let kap = kappa(&KappaQuery { gamma, a, c_delta })?;
    Ok(LemmaBound {
        gamma: Some(gamma),
        a: Some(a),
        horizon: Some((S::one() + b) * x / ((S::one() - eps) * mu)),
        ..LemmaBound::basic(LemmaId::DriftEscape, kap.log_kappa, kap.tail())
    })
}

/// `κ = κ_c(x/(2⟨X⟩_T), x/2)`, bound `1/κ`.
pub fn diffusive_barrier_bound<S: Scalar>(x: S, qvar_t: S, c_delta: S) -> Result<LemmaBound<S>, BoundError> {
    require(x > S::zero(), "x > 0")?;
    require(qvar_t > S::zero(), "qvar_T > 0")?;
    require(c_delta >= S::zero(), "c_delta >= 0")?;
    let two = S::lit(2.0);
    let gamma = x / (two * qvar_t);
    let a = x / two;
    let kap = kappa(&KappaQuery { gamma, a, c_delta })?;
    Ok(LemmaBound { gamma: Some(gamma), a: Some(a), ..LemmaBound::basic(LemmaId::DiffusiveBarrier, kap.log_kappa, kap.tail()) })
}

/// `T = 4(b+1)x²/σ²`, `γ = σ²/(4(2x+c)²ρ)`, `a = bx²`, bound `1/κ`.
pub fn diffusive_escape_bound<S: Scalar>(
    x: S,
    c_mu: S,
    sigma2: S,
    rho: S,
    b: S,
    c_delta: S,
) -> Result<LemmaBound<S>, BoundError> {
    let four = S::lit(4.0);
    require(x > S::zero(), "x > 0")?;
    require(four * x * c_mu > S::zero(), "4 x C_mu > 0")?;
    require(sigma2 >= four * x * c_mu, "sigma2 >= 4 x C_mu")?;
    require(rho >= sigma2, "rho >= sigma2")?;
    require(b >= S::zero(), "b >= 0")?;
    require(c_delta >= S::zero(), "c_delta >= 0")?;
    let w = S::lit(2.0) * x + c_delta;
    let gamma = sigma2 / (four * w * w * rho);
    let a = b * x * x;
    let kap = kappa(&KappaQuery { gamma, a, c_delta })?;
    Ok(LemmaBound {
        gamma: Some(gamma),
        a: Some(a),
        horizon: Some(four * (b + S::one()) * x * x / sigma2),
        ..LemmaBound::basic(LemmaId::DiffusiveEscape, kap.log_kappa, kap.tail())
    })
}
