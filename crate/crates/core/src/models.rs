//! Built-in process constructors.
//!
//! Descriptors encode every parameter, so two specs share a fingerprint only when they
//! describe the same model.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::process::{rescale_time, Channel, HjpError, JumpKernel, ProcessSpec};
use crate::scalar::Scalar;

fn nonneg<S: Scalar>(name: &str, v: S) -> Result<(), HjpError> {
    if v.is_nan() || v < S::zero() || v.is_infinite() {
        return Err(HjpError::InvalidSpec(format!("{name} must be finite and nonnegative, got {v}")));
    }
    Ok(())
}

/// Unit jumps at constant rate: `μ = σ² = rate`.
pub fn poisson_counter<S: Scalar>(rate: S) -> Result<ProcessSpec<S>, HjpError> {
    nonneg("rate", rate)?;
    let k = JumpKernel::Discrete(vec![Channel::constant(rate, vec![S::one()])]);
    ProcessSpec::new(1, k, S::one(), format!("poisson(rate={rate:?})"))
}

/// `±1` at constant rates `b` and `d`: `μ = b − d`, `σ² = b + d`.
pub fn birth_death<S: Scalar>(b: S, d: S) -> Result<ProcessSpec<S>, HjpError> {
    nonneg("birth rate", b)?;
    nonneg("death rate", d)?;
    let k = JumpKernel::Discrete(vec![Channel::constant(b, vec![S::one()]), Channel::constant(d, vec![-S::one()])]);
    ProcessSpec::new(1, k, S::one(), format!("birth_death(b={b:?},d={d:?})"))
}

/// `±h` at constant rates: a lattice walk with jump bound `h`.
pub fn lattice_walk<S: Scalar>(step: S, up: S, down: S) -> Result<ProcessSpec<S>, HjpError> {
    nonneg("up rate", up)?;
    nonneg("down rate", down)?;
    if !(step > S::zero()) || !step.is_finite() {
        return Err(HjpError::InvalidSpec(format!("step must be positive, got {step}")));
    }
    let k = JumpKernel::Discrete(vec![Channel::constant(up, vec![step]), Channel::constant(down, vec![-step])]);
    ProcessSpec::new(1, k, step, format!("lattice_walk(h={step:?},up={up:?},down={down:?})"))
}

/// Pure birth `X → X + 1` at rate `ℓX` (Yule process); `μ = ℓX`.
pub fn yule<S: Scalar>(ell: S) -> Result<ProcessSpec<S>, HjpError> {
    nonneg("ℓ", ell)?;
    let k = JumpKernel::Discrete(vec![Channel::fixed(move |x: &[S]| ell * x[0].max(S::zero()), vec![S::one()])]);
    ProcessSpec::new(1, k, S::one(), format!("yule(l={ell:?})"))
}

/// Deterministic `x' = a·x`.
pub fn linear_flow<S: Scalar>(a: S) -> Result<ProcessSpec<S>, HjpError> {
    ProcessSpec::pure_flow(1, move |x: &[S], o: &mut [S]| o[0] = a * x[0], format!("linear_flow(a={a:?})"))
}

/// Deterministic `x' = v`.
pub fn constant_flow<S: Scalar>(v: S) -> Result<ProcessSpec<S>, HjpError> {
    ProcessSpec::pure_flow(1, move |_: &[S], o: &mut [S]| o[0] = v, format!("constant_flow(v={v:?})"))
}

/// Stochastic logistic (SIS) model: `X → X+1` at rate `λn⁻¹X(n−X)`, `X → X−1` at rate `X`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SisParams<S> {
    pub n: u64,
    pub lambda: S,
    /// Simulate the density `x = X/n` (jumps `±1/n`) instead of the count `X`.
    pub rescaled: bool,
}

impl<S: Scalar> SisParams<S> {
    pub fn new(n: u64, lambda: S, rescaled: bool) -> Self {
        Self { n, lambda, rescaled }
    }

    pub fn n_scalar(&self) -> S {
        S::from_u64(self.n).expect("population size fits scalar")
    }

    /// `δ = 1 − λ`.
    pub fn delta(&self) -> S {
        S::one() - self.lambda
    }

    /// `δ₀ = n^{1/2}δ`.
    pub fn delta0(&self) -> S {
        self.n_scalar().sqrt() * self.delta()
    }

    /// Density drift `f(x) = λx(1−x) − x = −x(δ + λx)`.
    pub fn f(&self, x: S) -> S {
        self.lambda * x * (S::one() - x) - x
    }

    /// `f′(x) = −δ − 2λx`.
    pub fn df(&self, x: S) -> S {
        -self.delta() - S::lit(2.0) * self.lambda * x
    }

    /// `sup_{[0,1]} |f′| = max(|δ|, 1 + λ)`.
    pub fn lipschitz(&self) -> S {
        self.delta().abs().max(S::one() + self.lambda)
    }

    /// Density diffusivity `n⁻¹(λx(1−x) + x)`.
    pub fn sigma2(&self, x: S) -> S {
        (self.lambda * x * (S::one() - x) + x) / self.n_scalar()
    }

    /// Bound `c_q` on the density rate `λx(1−x) + x` over `[0, 1]`.
    pub fn c_q(&self) -> S {
        let l = self.lambda;
        if l >= S::one() {
            (S::one() + l) * (S::one() + l) / (S::lit(4.0) * l)
        } else {
            S::one()
        }
    }

    /// Closed-form flow `φ_t(x₀) = δx₀e^{−δt} / (δ + λx₀(1 − e^{−δt}))` (`δ ≠ 0`), and
    /// `x₀/(1 + λx₀t)` at `δ = 0`.
    pub fn flow(&self, x0: S, t: S) -> S {
        let (d, l) = (self.delta(), self.lambda);
        if d == S::zero() {
            return x0 / (S::one() + l * x0 * t);
        }
        let e = (-d * t).exp();
        d * x0 * e / (d + l * x0 * (S::one() - e))
    }

    fn validate(&self) -> Result<(), HjpError> {
        if self.n == 0 {
            return Err(HjpError::InvalidSpec("population size must be at least 1".into()));
        }
        nonneg("λ", self.lambda)
    }
}

/// Raw rates at count `k` (clamped at zero outside `[0, n]`).
fn sis_raw_rates<S: Scalar>(lambda: S, n: S, k: S) -> (S, S) {
    let up = (lambda * k * (n - k) / n).max(S::zero());
    let down = k.max(S::zero());
    (up, down)
}

pub fn sis<S: Scalar>(p: SisParams<S>) -> Result<ProcessSpec<S>, HjpError> {
    p.validate()?;
    let (l, n) = (p.lambda, p.n_scalar());
    if p.rescaled {
        let h = S::one() / n;
        let k = JumpKernel::Discrete(vec![
            Channel::fixed(move |x: &[S]| sis_raw_rates(l, n, n * x[0]).0, vec![h]),
            Channel::fixed(move |x: &[S]| sis_raw_rates(l, n, n * x[0]).1, vec![-h]),
        ]);
        ProcessSpec::new(1, k, h, format!("sis_density(n={},lambda={l:?})", p.n))
    } else {
        let k = JumpKernel::Discrete(vec![
            Channel::fixed(move |x: &[S]| sis_raw_rates(l, n, x[0]).0, vec![S::one()]),
            Channel::fixed(move |x: &[S]| sis_raw_rates(l, n, x[0]).1, vec![-S::one()]),
        ]);
        ProcessSpec::new(1, k, S::one(), format!("sis(n={},lambda={l:?})", p.n))
    }
}

/// Deviation `y_t = x_t − φ_t(x₀)` of the SIS density from its flow.
///
/// State `(y, φ, t)`: `φ` and the original time `t` are integrated by the engine
/// alongside `y`, and the jumps `±1/n` fire at the density rates of `x = y + φ`, so
/// `μ(y) = −y(δ + λ(x + φ))`. With `time_changed` the clock `δ + λ(x + φ)` is applied,
/// giving `μ(y) = −y` while `t` keeps tracking original time. Start from `[0, x₀, 0]`.
pub fn sis_deviation_process<S: Scalar>(p: SisParams<S>, time_changed: bool) -> Result<ProcessSpec<S>, HjpError> {
    p.validate()?;
    if !(p.delta() > S::zero()) {
        return Err(HjpError::Domain(format!("deviation process needs δ = 1 − λ > 0, got {}", p.delta())));
    }
    let (l, n) = (p.lambda, p.n_scalar());
    let h = S::one() / n;
    let k = JumpKernel::Discrete(vec![
        Channel::fixed(move |s: &[S]| sis_raw_rates(l, n, n * (s[0] + s[1])).0, vec![h, S::zero(), S::zero()]),
        Channel::fixed(move |s: &[S]| sis_raw_rates(l, n, n * (s[0] + s[1])).1, vec![-h, S::zero(), S::zero()]),
    ]);
    let base = ProcessSpec::new(3, k, h, format!("sis_deviation(n={},lambda={l:?})", p.n))?.with_flow(
        move |s: &[S], o: &mut [S]| {
            let fphi = p.f(s[1]);
            o[0] = -fphi;
            o[1] = fphi;
            o[2] = S::one();
        },
    );
    if !time_changed {
        return Ok(base);
    }
    let d = p.delta();
    Ok(rescale_time(&base, move |s: &[S]| d + l * (s[0] + S::lit(2.0) * s[1])))
}

/// Density-dependent chain `x = X/n` with transitions `X → X + ℓ` at rate `n q(X/n, ℓ)`.
#[derive(Clone)]
pub struct DensityDependent<S> {
    pub spec: ProcessSpec<S>,
    pub n: S,
    /// Declared bound on `Σ_ℓ q(x, ℓ)`.
    pub c_q: S,
    /// Declared bound on `|ℓ|` (sup norm).
    pub r: S,
    /// `c_Δ = r/n`.
    pub c_delta: S,
    /// `c_ρ = c_q r²/n ≥ q·c_Δ²`.
    pub c_rho: S,
    q_total: Arc<dyn Fn(&[S]) -> S + Send + Sync>,
}

impl<S: Scalar> DensityDependent<S> {
    /// Checks `Σ_ℓ q(x, ℓ) ≤ c_q` at `x`.
    pub fn check_rate_bound(&self, x: &[S]) -> Result<(), HjpError> {
        let total = (self.q_total)(x);
        if total > self.c_q * (S::one() + S::lit(1e-12)) {
            return Err(HjpError::Domain(format!("declared c_q = {} exceeded: Σq = {total}", self.c_q)));
        }
        Ok(())
    }
}

/// Builds the rescaled chain. `q_fn(x, j)` is the density rate of jump `jumps[j]`; jumps
/// larger than `r` in sup norm are rejected.
pub fn density_dependent<S: Scalar>(
    dim: usize,
    jumps: Vec<Vec<i64>>,
    q_fn: impl Fn(&[S], usize) -> S + Send + Sync + 'static,
    n: S,
    r: S,
    c_q: S,
    name: &str,
) -> Result<DensityDependent<S>, HjpError> {
    if !(n > S::zero()) || !(r > S::zero()) || !(c_q > S::zero()) {
        return Err(HjpError::InvalidSpec("n, r and c_q must be positive".into()));
    }
    for l in &jumps {
        if l.len() != dim {
            return Err(HjpError::Dimension { expected: dim, got: l.len() });
        }
        let size = l.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0);
        if S::from_u64(size).expect("jump size fits scalar") > r {
            return Err(HjpError::InvalidSpec(format!("jump {l:?} exceeds declared range r = {r}")));
        }
    }
    let q: Arc<dyn Fn(&[S], usize) -> S + Send + Sync> = Arc::new(q_fn);
    let channels = jumps
        .iter()
        .enumerate()
        .map(|(j, l)| {
            let q = q.clone();
            let disp = l.iter().map(|&v| S::from_i64(v).expect("jump fits scalar") / n).collect();
            Channel::fixed(move |x: &[S]| n * q(x, j).max(S::zero()), disp)
        })
        .collect();
    let c_delta = r / n;
    let spec = ProcessSpec::new(
        dim,
        JumpKernel::Discrete(channels),
        c_delta,
        format!("density_dependent({name},n={n:?},r={r:?},jumps={jumps:?})"),
    )?;
    let m = jumps.len();
    let q_total = Arc::new(move |x: &[S]| (0..m).fold(S::zero(), |a, j| a + q(x, j).max(S::zero())));
    Ok(DensityDependent { spec, n, c_q, r, c_delta, c_rho: c_q * r * r / n, q_total })
}
