//! Deterministic concentration machinery.
//!
//! `Γ(x) = x eˣ/2` is convex with fixed points `0` and `ln 2`; its inverse is computed
//! here directly (it equals the principal Lambert W of `2y`). From it
//! `ψ(y) = Γ⁻¹(y)/y`, `λ_c(γ) = ψ(cγ)γ` and `κ_c(γ, a) = exp(ψ(cγ)γa)`, whose reciprocal
//! is the generic one-sided tail bound for `±M_t ≥ a + γ⟨X⟩_t`.
//!
//! Every probability is returned as a [`ProbBound`]: the raw value of the formula and
//! the value clamped to `[0, 1]`, with a flag for vacuous (clamped) regimes.

mod lemmas;
mod sweep;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use lemmas::{
    diffusive_barrier_bound, diffusive_escape_bound, drift_barrier_bound, drift_escape_bound,
    linear_drift_bound, LemmaBound, LemmaId, LemmaQuery,
};
pub use sweep::{scaling_sweep, SweepItem, SweepPoint, SweepRegime};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("domain error: {0}")]
    Domain(String),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T, BoundError> {
    Err(BoundError::Domain(msg.into()))
}

/// Probability bound together with its unclamped value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbBound<S> {
    /// `min(raw, 1)`.
    pub value: S,
    pub raw: S,
    /// The formula exceeded 1 and was clamped.
    pub vacuous: bool,
}

impl<S: Scalar> ProbBound<S> {
    pub fn new(raw: S) -> Self {
        let raw = raw.max(S::zero());
        Self { value: raw.min(S::one()), raw, vacuous: raw >= S::one() }
    }

    /// `factor · e^{−exponent}` without overflowing when the exponent is very negative.
    pub fn from_log(factor: S, exponent: S) -> Self {
        Self::new((factor.ln() - exponent).exp())
    }

    pub fn trivial() -> Self {
        Self { value: S::one(), raw: S::one(), vacuous: true }
    }
}

/// `Γ(x) = x eˣ / 2`.
pub fn gamma_fn<S: Scalar>(x: S) -> S {
    x * x.exp() / S::lit(2.0)
}

fn check_nonneg<S: Scalar>(name: &str, v: S) -> Result<(), BoundError> {
    if v.is_nan() || v < S::zero() {
        return domain(format!("{name} must be nonnegative, got {v}"));
    }
    Ok(())
}

/// Below this argument `Γ⁻¹` is computed by bisection instead of Newton.
const NEWTON_THRESHOLD: f64 = 1e-2;

/// Inverse of [`gamma_fn`] on `[0, ∞)`.
pub fn gamma_inv<S: Scalar>(y: S) -> Result<S, BoundError> {
    check_nonneg("Γ⁻¹ argument", y)?;
    if y == S::zero() || y.is_infinite() {
        return Ok(y);
    }
    let two = S::lit(2.0);
    if y < S::lit(NEWTON_THRESHOLD) {
        // Γ(x) ≥ x/2, so the root lies in [0, 2y].
        let (mut lo, mut hi) = (S::zero(), two * y);
        loop {
            let mid = lo + (hi - lo) / two;
            if mid <= lo || mid >= hi {
                break;
            }
            if gamma_fn(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return Ok(if y - gamma_fn(lo) <= gamma_fn(hi) - y { lo } else { hi });
    }
    // Newton on g(x) = x + ln x − ln 2y, which is increasing and concave.
    let l = (two * y).ln();
    let mut x = if l < S::one() { two * y / (S::one() + two * y) } else { l - l.ln().max(S::zero()) };
    let (mut lo, mut hi) = (S::zero(), (two * y).min(l.max(S::one())));
    for _ in 0..100 {
        let g = x + x.ln() - l;
        if g == S::zero() {
            break;
        }
        if g < S::zero() {
            lo = lo.max(x);
        } else {
            hi = hi.min(x);
        }
        let mut next = x - g / (S::one() + S::one() / x);
        if !(next > lo && next < hi) {
            next = lo + (hi - lo) / two;
        }
        let done = (next - x).abs() <= S::epsilon() * x;
        x = next;
        if done {
            break;
        }
    }
    Ok(x)
}

/// `ψ(y) = Γ⁻¹(y)/y`, with the limit `ψ(0) = 2`.
pub fn psi<S: Scalar>(y: S) -> Result<S, BoundError> {
    check_nonneg("ψ argument", y)?;
    if y == S::zero() {
        return Ok(S::lit(2.0));
    }
    Ok(gamma_inv(y)? / y)
}

/// `λ_c(γ) = ψ(cγ)γ`, the inverse of `λ ↦ λe^{λc}/2`.
pub fn lambda_c<S: Scalar>(gamma: S, c_delta: S) -> Result<S, BoundError> {
    check_nonneg("γ", gamma)?;
    check_nonneg("c_Δ", c_delta)?;
    Ok(psi(c_delta * gamma)? * gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaQuery<S> {
    pub gamma: S,
    pub a: S,
    pub c_delta: S,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa<S> {
    pub log_kappa: S,
    /// `exp(log_kappa)`; infinite when that overflows.
    pub kappa: S,
}

impl<S: Scalar> Kappa<S> {
    /// Tail bound `1/κ`.
    pub fn tail(&self) -> ProbBound<S> {
        ProbBound::from_log(S::one(), self.log_kappa)
    }
}

/// `κ_c(γ, a)`. `c_Δ = 0` gives the limit `e^{2γa}`; `γ = 0` or `a = 0` gives `κ = 1`.
pub fn kappa<S: Scalar>(q: &KappaQuery<S>) -> Result<Kappa<S>, BoundError> {
    check_nonneg("γ", q.gamma)?;
    check_nonneg("a", q.a)?;
    check_nonneg("c_Δ", q.c_delta)?;
    let log_kappa = if q.gamma == S::zero() || q.a == S::zero() {
        S::zero()
    } else {
        psi(q.c_delta * q.gamma)? * q.gamma * q.a
    };
    Ok(Kappa { log_kappa, kappa: log_kappa.exp() })
}

/// Envelope `W_t = a + (λ/2)e^{λc}⟨X⟩_t` around the compensator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope<S> {
    pub width: S,
    /// One-sided exceedance bound `e^{−λa}`.
    pub one_sided: ProbBound<S>,
    /// Both-sided bound `2e^{−λa}`.
    pub two_sided: ProbBound<S>,
}

pub fn envelope<S: Scalar>(lambda: S, a: S, c_delta: S, qvar: S) -> Result<Envelope<S>, BoundError> {
    if !(lambda > S::zero()) || !(a > S::zero()) {
        return domain(format!("λ and a must be positive, got λ = {lambda}, a = {a}"));
    }
    check_nonneg("c_Δ", c_delta)?;
    check_nonneg("⟨X⟩", qvar)?;
    Ok(Envelope {
        width: a + lambda / S::lit(2.0) * (lambda * c_delta).exp() * qvar,
        one_sided: ProbBound::from_log(S::one(), lambda * a),
        two_sided: ProbBound::from_log(S::lit(2.0), lambda * a),
    })
}

/// Parameters minimizing the one-sided bound for a deviation `δ` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonBound<S> {
    pub a: S,
    pub gamma: S,
    pub log_kappa: S,
    pub probability: ProbBound<S>,
}

/// Minimizes over `a + γc_ρT = δ`: `a = δ/2`, `γ = δ/(2c_ρT)`, bound
/// `exp(−ψ(c_Δγ) δ²/(4c_ρT))`.
pub fn optimize_horizon<S: Scalar>(delta: S, c_rho: S, horizon: S, c_delta: S) -> Result<HorizonBound<S>, BoundError> {
    for (name, v) in [("δ", delta), ("c_ρ", c_rho), ("T", horizon)] {
        if !(v > S::zero()) {
            return domain(format!("{name} must be positive, got {v}"));
        }
    }
    let two = S::lit(2.0);
    let a = delta / two;
    let gamma = delta / (two * c_rho * horizon);
    let k = kappa(&KappaQuery { gamma, a, c_delta })?;
    Ok(HorizonBound { a, gamma, log_kappa: k.log_kappa, probability: k.tail() })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeBound<S> {
    /// Deviation radius `e^{LT}δ`.
    pub radius: S,
    pub log_kappa: S,
    pub probability: ProbBound<S>,
}

/// Bound on `P(sup_{t≤T} |X_t − φ_t(X₀)| ≥ e^{LT}δ)` for a drift with Lipschitz constant `L`.
pub fn ode_approx_bound<S: Scalar>(
    delta: S,
    c_rho: S,
    c_delta: S,
    horizon: S,
    lipschitz: S,
) -> Result<OdeBound<S>, BoundError> {
    check_nonneg("L", lipschitz)?;
    let h = optimize_horizon(delta, c_rho, horizon, c_delta)?;
    Ok(OdeBound { radius: (lipschitz * horizon).exp() * delta, log_kappa: h.log_kappa, probability: h.probability })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    /// Independent oracle: plain bisection on xeˣ/2 = y.
    fn bisect_gamma_inv(y: f64) -> f64 {
        let (mut lo, mut hi) = (0.0f64, 1.0f64.max(y.ln() + 1.0).max(2.0 * y).min(50.0));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() / 2.0 < y {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_fn(0.0f64), 0.0);
        assert!((gamma_fn(LN2) - LN2).abs() < 1e-16);
        assert!((gamma_fn(1.0f64) - 1.359140914229522_6).abs() < 1e-15);
    }

    #[test]
    fn gamma_inv_examples() {
        assert_eq!(gamma_inv(0.0f64).unwrap(), 0.0);
        assert!((gamma_inv(LN2).unwrap() - LN2).abs() < 1e-15);
        // Oracle value: bisection on xeˣ = 2, frozen.
        assert!((gamma_inv(1.0f64).unwrap() - 0.852_605_502_013_725_5).abs() < 1e-14);
        assert!((bisect_gamma_inv(1.0) - 0.852_605_502_013_725_5).abs() < 1e-14);
        assert!(gamma_inv(-1.0).is_err());
        assert!(gamma_inv(f64::NAN).is_err());
    }

    #[test]
    fn gamma_inv_matches_oracle() {
        for i in 0..200 {
            let y = 10f64.powf(-8.0 + 11.0 * i as f64 / 199.0);
            let a = gamma_inv(y).unwrap();
            let b = bisect_gamma_inv(y);
            assert!((a - b).abs() <= 1e-13 * b.max(1e-300) + 1e-300, "y = {y}: {a} vs {b}");
        }
    }

    #[test]
    fn round_trip_grid() {
        for i in 0..1000 {
            let y = 10f64.powf(-8.0 + 11.0 * i as f64 / 999.0);
            let x = gamma_inv(y).unwrap();
            assert!((gamma_fn(x) - y).abs() <= 1e-12 * y.max(1.0), "y = {y}");
        }
    }

    #[test]
    fn psi_examples_and_shape() {
        assert_eq!(psi(0.0f64).unwrap(), 2.0);
        assert!((psi(LN2).unwrap() - 1.0).abs() < 1e-12);
        assert!((psi(1.0f64).unwrap() - 0.852_605_502_013_725_5).abs() < 1e-14);
        assert!((psi(1e-6f64).unwrap() - 2.0).abs() < 1e-3);
        assert!(psi(LN2 - 1e-9).unwrap() >= 1.0);
        assert!(psi(LN2 + 1e-9).unwrap() < 1.0);
        let mut prev = 2.0;
        for i in 0..1000 {
            let y = 10f64.powf(-8.0 + 11.0 * i as f64 / 999.0);
            let p = psi(y).unwrap();
            assert!(p > 0.0 && p <= 2.0 && p <= prev);
            prev = p;
        }
    }

    #[test]
    fn kappa_examples() {
        let k = kappa(&KappaQuery { gamma: 1.0f64, a: 1.0, c_delta: 0.0 }).unwrap();
        assert_eq!(k.log_kappa, 2.0);
        let k = kappa(&KappaQuery { gamma: LN2, a: 1.0, c_delta: 1.0 }).unwrap();
        assert!((k.kappa - 2.0).abs() < 1e-12);
        let k = kappa(&KappaQuery { gamma: 1.0f64, a: 3.0, c_delta: 1.0 }).unwrap();
        assert!((k.log_kappa - 2.557_816_506_041_176_5).abs() < 1e-13);
        assert!(kappa(&KappaQuery { gamma: -1.0, a: 1.0, c_delta: 0.0 }).is_err());
    }

    #[test]
    fn kappa_small_c_limit() {
        for gi in 1..=5 {
            for ai in 1..=5 {
                let (g, a) = (0.5 * gi as f64, 0.7 * ai as f64);
                let k = kappa(&KappaQuery { gamma: g, a, c_delta: 1e-8 }).unwrap();
                assert!((k.log_kappa - 2.0 * g * a).abs() <= 1e-6 * g * a);
            }
        }
    }

    #[test]
    fn envelope_examples() {
        assert_eq!(envelope(1.0f64, 1.0, 0.0, 0.0).unwrap().width, 1.0);
        assert_eq!(envelope(1.0f64, 1.0, 0.0, 2.0).unwrap().width, 2.0);
        assert!((envelope(1.0f64, 1.0, LN2, 2.0).unwrap().width - 3.0).abs() < 1e-15);
        assert!((envelope(1.0f64, 2.0, 0.0, 0.0).unwrap().two_sided.value - 2.0 * (-2.0f64).exp()).abs() < 1e-16);
        assert!(envelope(0.0f64, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn horizon_examples() {
        let h = optimize_horizon(0.2f64, 1.0, 1.0, 0.0).unwrap();
        assert!((h.a - 0.1).abs() < 1e-16 && (h.gamma - 0.1).abs() < 1e-16);
        assert!((h.probability.value - (-0.02f64).exp()).abs() < 1e-15);
        let h = optimize_horizon(0.7f64, 2.0, 3.0, 0.0).unwrap();
        assert!((h.probability.value - (-0.49f64 / 12.0).exp()).abs() < 1e-15);
        let h = optimize_horizon(0.2f64, 1.0, 1.0, 1.0).unwrap();
        let psi01 = bisect_gamma_inv(0.1) / 0.1;
        assert!((psi01 - 1.689_159_734_991_095_8_f64).abs() < 1e-12);
        assert!((h.probability.value - (-psi01 * 0.01).exp()).abs() < 1e-14);
    }

    #[test]
    fn ode_bound_examples() {
        let b = ode_approx_bound(0.2f64, 1.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(b.radius, 0.2);
        assert_eq!(b.probability, optimize_horizon(0.2f64, 1.0, 1.0, 0.0).unwrap().probability);
        let b = ode_approx_bound(0.05f64, 0.03, 0.01, 2.0, 1.0).unwrap();
        assert!((b.radius - 0.05 * 2f64.exp()).abs() < 1e-15);
        let y = 0.01 * 0.05 / 0.12;
        let expect = (-(bisect_gamma_inv(y) / y) * 0.0025 / 0.24).exp();
        assert!((b.probability.value - expect).abs() < 1e-13);
    }

    #[test]
    fn density_dependent_exponent_limit() {
        // δ = f n^{-1/2}, c_ρ = c_q r/n, c_Δ = r/n: exponent tends to 2f²/(4 c_q r T).
        let (f, cq, r, t) = (3.0, 2.0, 1.0, 1.5);
        let n = 1e12f64;
        let b = optimize_horizon(f / n.sqrt(), cq * r / n, t, r / n).unwrap();
        assert!((b.log_kappa - 2.0 * f * f / (4.0 * cq * r * t)).abs() < 1e-5);
    }

    #[test]
    fn lambda_c_at_most_two_gamma() {
        for i in 0..100 {
            let g = 10f64.powf(-3.0 + 6.0 * i as f64 / 99.0);
            for c in [0.0, 0.01, 1.0, 10.0] {
                assert!(lambda_c(g, c).unwrap() <= 2.0 * g * (1.0 + 1e-15));
            }
        }
    }

    #[test]
    fn works_in_f32() {
        let x = gamma_inv(1.0f32).unwrap();
        assert!((x - 0.852_605_5).abs() < 1e-6);
        assert!((psi(0.0f32).unwrap() - 2.0).abs() < 1e-7);
    }

    proptest! {
        #[test]
        fn gamma_inv_monotone(a in 1e-9f64..1e4, b in 1e-9f64..1e4) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(gamma_inv(lo).unwrap() <= gamma_inv(hi).unwrap());
            prop_assert!(psi(lo).unwrap() >= psi(hi).unwrap());
        }

        #[test]
        fn gamma_inv_round_trip(y in 0.0f64..1e6) {
            let x = gamma_inv(y).unwrap();
            prop_assert!((gamma_fn(x) - y).abs() <= 1e-12 * y.max(1.0));
        }

        #[test]
        fn kappa_bound_in_unit_interval(g in 0.0f64..100.0, a in 0.0f64..100.0, c in 0.0f64..10.0) {
            let k = kappa(&KappaQuery { gamma: g, a, c_delta: c }).unwrap();
            let p = k.tail();
            prop_assert!(p.value >= 0.0 && p.value <= 1.0);
            prop_assert!(k.log_kappa <= 2.0 * g * a * (1.0 + 1e-14));
        }
    }
}
