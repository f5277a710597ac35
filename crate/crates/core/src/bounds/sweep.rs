//! Lower bounds on `log κ` along a `c_Δ` grid in the bounded-rate regime
//! `c_q c_Δ^α ≤ C`, one formula per first-passage estimate.

use serde::{Deserialize, Serialize};

use super::{domain, gamma_inv, kappa, BoundError, KappaQuery};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "item", rename_all = "snake_case", deny_unknown_fields)]
pub enum SweepItem<S> {
    /// `(x − c)Γ⁻¹(μc^{α−1}/C)/2c`.
    DriftBarrier { x: S, mu: S },
    /// `bxΓ⁻¹(εμc^{α−1}/C)/c`.
    DriftEscape { x: S, mu: S, b: S, eps: S },
    /// `Γ⁻¹(xc^{α−1}/2CT)·x/2c`.
    DiffusiveBarrier { x: S, horizon: S },
    /// `log κ_c(σ²/(4(2x+c)²ρ), bx²)` with `ρ = Cc^{2−α}`; infeasible when `ρ < σ²`.
    DiffusiveEscape { x: S, sigma2: S, b: S },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRegime<S> {
    pub alpha: S,
    /// Constant `C` in `c_q c_Δ^α ≤ C`.
    pub c_const: S,
    #[serde(flatten)]
    pub item: SweepItem<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint<S> {
    pub c_delta: S,
    pub log_kappa: S,
    /// `c_Δ · log κ`; tends to a positive constant in the large-deviation regime `α = 1`.
    pub scaled: S,
    /// False where the estimate's hypotheses cannot hold (`x ≤ c_Δ`, or `ρ < σ²`).
    pub feasible: bool,
}

pub fn scaling_sweep<S: Scalar>(regime: &SweepRegime<S>, grid: &[S]) -> Result<Vec<SweepPoint<S>>, BoundError> {
    let (alpha, cc) = (regime.alpha, regime.c_const);
    if !(alpha >= S::one() && alpha <= S::lit(2.0)) {
        return domain(format!("alpha must lie in [1, 2], got {alpha}"));
    }
    if !(cc > S::zero()) {
        return domain(format!("C must be positive, got {cc}"));
    }
    let two = S::lit(2.0);
    grid.iter()
        .map(|&c| {
            if !(c > S::zero()) || !c.is_finite() {
                return domain(format!("grid values must be positive, got {c}"));
            }
            let ca1 = c.powf(alpha - S::one());
            let (log_kappa, feasible) = match regime.item {
                SweepItem::DriftBarrier { x, mu } => ((x - c) * gamma_inv(mu * ca1 / cc)? / (two * c), x > c),
                SweepItem::DriftEscape { x, mu, b, eps } => (b * x * gamma_inv(eps * mu * ca1 / cc)? / c, true),
                SweepItem::DiffusiveBarrier { x, horizon } => {
                    (gamma_inv(x * ca1 / (two * cc * horizon))? * x / (two * c), true)
                }
                SweepItem::DiffusiveEscape { x, sigma2, b } => {
                    let rho = cc * c.powf(two - alpha);
                    let w = two * x + c;
                    let gamma = sigma2 / (S::lit(4.0) * w * w * rho);
                    (kappa(&KappaQuery { gamma, a: b * x * x, c_delta: c })?.log_kappa, rho >= sigma2)
                }
            };
            Ok(SweepPoint { c_delta: c, log_kappa, scaled: log_kappa * c, feasible })
        })
        .collect()
}
