//! Hybrid jump process specifications.
//!
//! A process is described by its data `(q, D, Δ)`: a state-dependent jump intensity
//! `q`, a flow derivative `D` followed between jumps, and a jump function `Δ(x, u)`
//! indexed by a uniform mark `u ∈ [0, 1]`. Jump functions are evaluated at the pre-jump
//! state. Lattice Markov chains enter through [`JumpKernel::Discrete`], where each
//! channel contributes a rate and a displacement and `q` is the sum of the rates.
//!
//! Evaluation comes in two flavours: the `*_into` methods write into caller buffers and
//! skip validation (the simulator's hot path), while [`ProcessSpec::drift`],
//! [`ProcessSpec::diffusivity`] and [`ProcessSpec::report`] check every component and
//! return [`HjpError`] on non-finite values.

mod calculus;

use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use smallvec::SmallVec;
use thiserror::Error;

use crate::scalar::{all_finite, sup_norm, Scalar};

pub use calculus::{
    covariability, covariability_matrix, diffusivity, drift, product_drift, rescale_time,
    taylor_drift_gap_bound, transform_process, ScalarMap,
};

/// State-to-scalar map (rates, clocks).
pub type RateFn<S> = Arc<dyn Fn(&[S]) -> S + Send + Sync>;
/// State-to-vector map writing into the output slice (flow fields, displacements).
pub type FieldFn<S> = Arc<dyn Fn(&[S], &mut [S]) + Send + Sync>;
/// Jump function `(x, u) ↦ Δ(x, u)` writing into the output slice.
pub type JumpFn<S> = Arc<dyn Fn(&[S], S, &mut [S]) + Send + Sync>;

pub(crate) type Buf<S> = SmallVec<[S; 4]>;

/// Default node count of the composite midpoint rule over `u ∈ [0, 1]`.
pub const DEFAULT_QUADRATURE_NODES: usize = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HjpError {
    #[error("non-finite {component} at state {state:?}")]
    NonFinite { component: &'static str, state: Vec<f64> },
    #[error("time-change clock must be positive, got {value} at state {state:?}")]
    TimeChange { value: f64, state: Vec<f64> },
    #[error("transformed process is non-finite at state {state:?}")]
    Transform { state: Vec<f64> },
    #[error("coupled processes must share jump rates: {0}")]
    Coupling(String),
    #[error("state has dimension {got}, process expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid process specification: {0}")]
    InvalidSpec(String),
}

fn state_f64<S: Scalar>(x: &[S]) -> Vec<f64> {
    x.iter().map(|v| v.as_f64()).collect()
}

/// One channel of a discrete jump kernel: a rate contribution and a displacement.
#[derive(Clone)]
pub struct Channel<S> {
    weight: RateFn<S>,
    displacement: FieldFn<S>,
}

impl<S: Scalar> Channel<S> {
    pub fn new(
        weight: impl Fn(&[S]) -> S + Send + Sync + 'static,
        displacement: impl Fn(&[S], &mut [S]) + Send + Sync + 'static,
    ) -> Self {
        Self { weight: Arc::new(weight), displacement: Arc::new(displacement) }
    }

    /// Channel with a state-dependent rate and a fixed displacement vector.
    pub fn fixed(weight: impl Fn(&[S]) -> S + Send + Sync + 'static, displacement: Vec<S>) -> Self {
        Self::new(weight, move |_, out| out.copy_from_slice(&displacement))
    }

    /// Channel with constant rate and fixed displacement.
    pub fn constant(weight: S, displacement: Vec<S>) -> Self {
        Self::fixed(move |_| weight, displacement)
    }

    #[inline]
    pub fn weight(&self, x: &[S]) -> S {
        (self.weight)(x)
    }

    #[inline]
    pub fn displace(&self, x: &[S], out: &mut [S]) {
        (self.displacement)(x, out)
    }
}

/// Jump law of a process.
#[derive(Clone)]
pub enum JumpKernel<S> {
    /// Markov-chain embedding: `q(x) = Σ wᵢ(x)` and `Δ(x, u)` selects channel `i` when
    /// `u` falls in the `i`-th cumulative-weight slot.
    Discrete(Vec<Channel<S>>),
    /// General kernel with explicit rate and mark-indexed jump; expectations over `u`
    /// use a midpoint rule with `nodes` nodes.
    Continuous { rate: RateFn<S>, jump: JumpFn<S>, nodes: usize },
}

impl<S: Scalar> JumpKernel<S> {
    /// Kernel that never jumps.
    pub fn none() -> Self {
        JumpKernel::Discrete(Vec::new())
    }

    pub fn continuous(
        rate: impl Fn(&[S]) -> S + Send + Sync + 'static,
        jump: impl Fn(&[S], S, &mut [S]) + Send + Sync + 'static,
        nodes: usize,
    ) -> Self {
        JumpKernel::Continuous { rate: Arc::new(rate), jump: Arc::new(jump), nodes }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, JumpKernel::Discrete(c) if c.is_empty())
    }
}

/// Data `(q, D, Δ)` of a hybrid jump process together with its declared jump bound.
#[derive(Clone)]
pub struct ProcessSpec<S> {
    dim: usize,
    flow: Option<FieldFn<S>>,
    kernel: JumpKernel<S>,
    c_delta: S,
    clock: Option<RateFn<S>>,
    transformed: bool,
    descriptor: String,
}

impl<S: Scalar> fmt::Debug for ProcessSpec<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProcessSpec")
            .field("descriptor", &self.descriptor)
            .field("dim", &self.dim)
            .field("c_delta", &self.c_delta)
            .field("has_flow", &self.flow.is_some())
            .field("clocked", &self.clock.is_some())
            .finish()
    }
}

impl<S: Scalar> ProcessSpec<S> {
    pub fn new(
        dim: usize,
        kernel: JumpKernel<S>,
        c_delta: S,
        descriptor: impl Into<String>,
    ) -> Result<Self, HjpError> {
        if dim == 0 {
            return Err(HjpError::InvalidSpec("dimension must be positive".into()));
        }
        if !(c_delta > S::zero()) {
            return Err(HjpError::InvalidSpec(format!("jump bound must be positive, got {c_delta}")));
        }
        if let JumpKernel::Continuous { nodes, .. } = &kernel {
            if *nodes < 2 {
                return Err(HjpError::InvalidSpec(format!(
                    "continuous kernels need at least 2 quadrature nodes, got {nodes}"
                )));
            }
        }
        Ok(Self {
            dim,
            flow: None,
            kernel,
            c_delta,
            clock: None,
            transformed: false,
            descriptor: descriptor.into(),
        })
    }

    /// Pure flow `x' = D(x)` with no jumps.
    pub fn pure_flow(
        dim: usize,
        field: impl Fn(&[S], &mut [S]) + Send + Sync + 'static,
        descriptor: impl Into<String>,
    ) -> Result<Self, HjpError> {
        Ok(Self::new(dim, JumpKernel::none(), S::one(), descriptor)?.with_flow(field))
    }

    /// Attaches the inter-jump derivative `D`.
    pub fn with_flow(mut self, field: impl Fn(&[S], &mut [S]) + Send + Sync + 'static) -> Self {
        self.flow = Some(Arc::new(field));
        self
    }

    /// Deterministic process following the drift field of `self` (no jumps).
    pub fn drift_flow(&self) -> Self {
        let base = self.clone();
        let mut out = Self {
            dim: self.dim,
            flow: None,
            kernel: JumpKernel::none(),
            c_delta: self.c_delta,
            clock: None,
            transformed: false,
            descriptor: format!("drift_flow({})", self.descriptor),
        };
        out.flow = Some(Arc::new(move |x: &[S], o: &mut [S]| base.drift_into(x, o)));
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn c_delta(&self) -> S {
        self.c_delta
    }

    pub fn kernel(&self) -> &JumpKernel<S> {
        &self.kernel
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn has_flow(&self) -> bool {
        self.flow.is_some()
    }

    pub fn has_clock(&self) -> bool {
        self.clock.is_some()
    }

    /// False for specs produced by [`transform_process`], whose functions are evaluated
    /// at the state of the underlying process rather than at their own value.
    pub fn is_autonomous(&self) -> bool {
        !self.transformed
    }

    /// Stable 64-bit identifier of the model (descriptor, dimension, jump bound).
    pub fn fingerprint(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(self.descriptor.as_bytes());
        h.update((self.dim as u64).to_le_bytes());
        h.update(self.c_delta.as_f64().to_bits().to_le_bytes());
        let digest = h.finalize();
        u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
    }

    /// Time-change factor at `x` (1 without a clock).
    #[inline]
    pub fn clock(&self, x: &[S]) -> S {
        self.clock.as_ref().map_or(S::one(), |c| c(x))
    }

    /// Jump intensity `q(x)`.
    #[inline]
    pub fn rate(&self, x: &[S]) -> S {
        let base = match &self.kernel {
            JumpKernel::Discrete(ch) => ch.iter().fold(S::zero(), |acc, c| acc + c.weight(x)),
            JumpKernel::Continuous { rate, .. } => rate(x),
        };
        match &self.clock {
            Some(c) => base / c(x),
            None => base,
        }
    }

    /// Writes `D(x)` (zero without a flow).
    #[inline]
    pub fn derivative_into(&self, x: &[S], out: &mut [S]) {
        match &self.flow {
            Some(f) => {
                f(x, out);
                if let Some(c) = &self.clock {
                    let k = c(x);
                    out.iter_mut().for_each(|v| *v /= k);
                }
            }
            None => out.iter_mut().for_each(|v| *v = S::zero()),
        }
    }

    /// Samples the jump `Δ(x, u)` into `out`. Returns the selected channel for discrete
    /// kernels, `None` for continuous kernels or when every channel rate vanishes (in
    /// which case `out` is zero).
    pub fn jump_into(&self, x: &[S], u: S, out: &mut [S]) -> Option<usize> {
        match &self.kernel {
            JumpKernel::Discrete(ch) => {
                let weights: Buf<S> = ch.iter().map(|c| c.weight(x)).collect();
                let total = weights.iter().fold(S::zero(), |a, &w| a + w);
                let target = u * total;
                let mut acc = S::zero();
                let mut chosen = None;
                for (i, &w) in weights.iter().enumerate() {
                    acc += w;
                    if w > S::zero() {
                        chosen = Some(i);
                        if target <= acc {
                            break;
                        }
                    }
                }
                match chosen {
                    Some(i) => ch[i].displace(x, out),
                    None => out.iter_mut().for_each(|v| *v = S::zero()),
                }
                chosen
            }
            JumpKernel::Continuous { jump, .. } => {
                jump(x, u, out);
                None
            }
        }
    }

    /// Writes drift `μ` and per-coordinate diffusivity `σ²` at `x`; returns `q(x)`.
    /// No validation.
    pub fn moments_into(&self, x: &[S], mu: &mut [S], sigma2: &mut [S]) -> S {
        let d = self.dim;
        let mut disp: Buf<S> = SmallVec::from_elem(S::zero(), d);
        sigma2.iter_mut().for_each(|v| *v = S::zero());
        match &self.flow {
            Some(f) => f(x, mu),
            None => mu.iter_mut().for_each(|v| *v = S::zero()),
        }
        let q = match &self.kernel {
            JumpKernel::Discrete(ch) => {
                let mut q = S::zero();
                for c in ch {
                    let w = c.weight(x);
                    if w == S::zero() {
                        continue;
                    }
                    q += w;
                    c.displace(x, &mut disp);
                    for i in 0..d {
                        mu[i] += w * disp[i];
                        sigma2[i] += w * disp[i] * disp[i];
                    }
                }
                q
            }
            JumpKernel::Continuous { rate, jump, nodes } => {
                let q = rate(x);
                let n = S::from_usize(*nodes).expect("node count fits scalar");
                let mut m1: Buf<S> = SmallVec::from_elem(S::zero(), d);
                let mut m2: Buf<S> = SmallVec::from_elem(S::zero(), d);
                for k in 0..*nodes {
                    let u = (S::from_usize(k).expect("node index fits scalar") + S::lit(0.5)) / n;
                    jump(x, u, &mut disp);
                    for i in 0..d {
                        m1[i] += disp[i];
                        m2[i] += disp[i] * disp[i];
                    }
                }
                for i in 0..d {
                    mu[i] += q * (m1[i] / n);
                    sigma2[i] = q * (m2[i] / n);
                }
                q
            }
        };
        match &self.clock {
            Some(c) => {
                let k = c(x);
                mu.iter_mut().for_each(|v| *v /= k);
                sigma2.iter_mut().for_each(|v| *v /= k);
                q / k
            }
            None => q,
        }
    }

    /// Unchecked drift.
    #[inline]
    pub fn drift_into(&self, x: &[S], mu: &mut [S]) {
        let mut s2: Buf<S> = SmallVec::from_elem(S::zero(), self.dim);
        self.moments_into(x, mu, &mut s2);
    }

    fn check_state(&self, x: &[S]) -> Result<(), HjpError> {
        if x.len() != self.dim {
            return Err(HjpError::Dimension { expected: self.dim, got: x.len() });
        }
        Ok(())
    }

    /// Validates every component of the data at `x`: clock, rate, derivative and the
    /// jumps entering the expectations.
    fn validate_at(&self, x: &[S]) -> Result<(), HjpError> {
        self.check_state(x)?;
        if let Some(c) = &self.clock {
            let k = c(x);
            if !(k > S::zero()) || !k.is_finite() {
                return Err(HjpError::TimeChange { value: k.as_f64(), state: state_f64(x) });
            }
        }
        let non_finite = |component| {
            if self.transformed && component == "jump" {
                HjpError::Transform { state: state_f64(x) }
            } else {
                HjpError::NonFinite { component, state: state_f64(x) }
            }
        };
        let mut buf: Buf<S> = SmallVec::from_elem(S::zero(), self.dim);
        if let Some(f) = &self.flow {
            f(x, &mut buf);
            if !all_finite(&buf) {
                return Err(non_finite("derivative"));
            }
        }
        match &self.kernel {
            JumpKernel::Discrete(ch) => {
                for c in ch {
                    let w = c.weight(x);
                    if !w.is_finite() {
                        return Err(non_finite("rate"));
                    }
                    if w < S::zero() {
                        return Err(HjpError::Domain(format!("negative channel rate {w}")));
                    }
                    c.displace(x, &mut buf);
                    if !all_finite(&buf) {
                        return Err(non_finite("jump"));
                    }
                }
            }
            JumpKernel::Continuous { rate, jump, nodes } => {
                let q = rate(x);
                if !q.is_finite() {
                    return Err(non_finite("rate"));
                }
                if q < S::zero() {
                    return Err(HjpError::Domain(format!("negative rate {q}")));
                }
                let n = S::from_usize(*nodes).expect("node count fits scalar");
                for k in 0..*nodes {
                    let u = (S::from_usize(k).expect("node index fits scalar") + S::lit(0.5)) / n;
                    jump(x, u, &mut buf);
                    if !all_finite(&buf) {
                        return Err(non_finite("jump"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Drift `μ(x) = D(x) + q(x)·E[Δ(x, u)]`.
    pub fn drift(&self, x: &[S]) -> Result<Vec<S>, HjpError> {
        Ok(self.report(x)?.mu)
    }

    /// Per-coordinate diffusivity `σ²(x) = q(x)·E[Δ(x, u)²]`.
    pub fn diffusivity(&self, x: &[S]) -> Result<Vec<S>, HjpError> {
        Ok(self.report(x)?.sigma2)
    }

    /// Drift, diffusivity and the crude bound `ρ = q·c_Δ²` at `x`.
    pub fn report(&self, x: &[S]) -> Result<DriftReport<S>, HjpError> {
        self.validate_at(x)?;
        let mut mu = vec![S::zero(); self.dim];
        let mut sigma2 = vec![S::zero(); self.dim];
        let q = self.moments_into(x, &mut mu, &mut sigma2);
        Ok(DriftReport { mu, sigma2, rho: q * self.c_delta * self.c_delta })
    }

    /// Checks a sampled displacement against the declared jump bound, allowing for
    /// rounding in the displacement itself.
    #[inline]
    pub fn respects_jump_bound(&self, disp: &[S]) -> bool {
        sup_norm(disp) <= self.c_delta * (S::one() + S::lit(64.0) * S::epsilon())
    }
}

/// Drift, diffusivity and `ρ = q·c_Δ²` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport<S> {
    pub mu: Vec<S>,
    pub sigma2: Vec<S>,
    pub rho: S,
}
