//! Exact event-driven simulation of hybrid jump processes.
//!
//! Between jumps the state follows `x' = D(x)`, integrated by fixed-step classical RK4,
//! while the cumulative hazard `Λ(t) = ∫ q(x_s) ds` is carried along as an extra
//! component of the same system. A jump fires when `Λ` crosses an independent
//! unit-exponential threshold; inside the step the crossing time is localized by
//! bisection to `hazard_tol`. At the jump a uniform mark `u` is drawn and the state is
//! displaced by `Δ(x⁻, u)`. Specs without a flow take an exact path: the state is frozen
//! between jumps, so waiting times are exponential and every integral is linear.
//!
//! The integrals `∫μ ds` and `∫σ² ds` (and any caller-supplied integrands) use the same
//! RK4 stage evaluations as the hazard, so the compensator is consistent with the jump
//! times the engine produced.
//!
//! The random stream of a path alternates strictly between the exponential threshold of
//! the next jump and the uniform mark of that jump (thinning mode: exponential gap,
//! uniform acceptance/mark).

mod engine;
mod export;
mod path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::process::HjpError;
use crate::scalar::Scalar;

pub use engine::{simulate_with, Integrand, PathObserver, Sample, SampleKind, Summary};
pub use export::{
    format_shortest, read_manifest, write_manifest, write_path_csv, BinaryManifest, MANIFEST_MAGIC,
};
pub use path::{
    compensated_path, first_passage, simulate, FirstPassage, GridPoint, JumpEvent, Path,
    PathRecorder, PathStatistics, Region,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Process(#[from] HjpError),
    #[error("initial state has dimension {got}, process expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("state became non-finite; last valid time {last_valid_time}")]
    NonFinite { last_valid_time: f64 },
    #[error("rate {rate} is negative or non-finite at t = {t}")]
    BadRate { rate: f64, t: f64 },
    #[error("time-change clock {value} is not positive at t = {t}")]
    Clock { value: f64, t: f64 },
    #[error("contract violation: jump of size {size} exceeds declared bound {bound} at t = {t}")]
    JumpBound { size: f64, bound: f64, t: f64 },
    #[error("thinning bound {bound} is below the rate {rate} at t = {t}")]
    ThinningBound { bound: f64, rate: f64, t: f64 },
    #[error("process is a transformed observable and cannot be simulated on its own")]
    NotAutonomous,
    #[error("path fingerprint {path:016x} does not match process fingerprint {spec:016x}")]
    FingerprintMismatch { path: u64, spec: u64 },
}

/// How jump times are sampled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum JumpSampling<S> {
    /// Integrate the hazard and fire at an exponential threshold.
    HazardInversion,
    /// Poisson candidates at a global rate bound, accepted with probability `q/bound`.
    Thinning { rate_bound: S },
}

/// Why a path ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Horizon,
    StoppedByPredicate,
    TruncatedRate,
    TruncatedNorm,
}

impl Terminal {
    pub fn is_truncated(self) -> bool {
        matches!(self, Terminal::TruncatedRate | Terminal::TruncatedNorm)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Terminal::Horizon => 0,
            Terminal::StoppedByPredicate => 1,
            Terminal::TruncatedRate => 2,
            Terminal::TruncatedNorm => 3,
        }
    }

    pub(crate) fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => Terminal::Horizon,
            1 => Terminal::StoppedByPredicate,
            2 => Terminal::TruncatedRate,
            3 => Terminal::TruncatedNorm,
            _ => return None,
        })
    }
}

/// Simulation parameters. All times are in the process's time units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig<S> {
    /// Maximal simulated time `T`.
    pub horizon: S,
    /// Spacing of recorded grid samples.
    pub dt_grid: S,
    /// RK4 step between jumps.
    pub ode_step: S,
    /// Width to which jump and stopping times inside a flow step are localized.
    pub hazard_tol: S,
    /// Rate at or above which the path is truncated.
    pub q_max: S,
    /// Sup-norm at or above which the path is truncated.
    pub x_max: S,
    pub seed: u64,
    pub path_index: u64,
    pub sampling: JumpSampling<S>,
    /// Fail with [`SimError::JumpBound`] when a sampled jump exceeds `c_Δ`.
    pub audit_jumps: bool,
}

impl<S: Scalar> SimConfig<S> {
    /// Defaults: `dt_grid = T/10⁴`, `ode_step = dt_grid/4`, `hazard_tol = 1e-10`.
    pub fn new(horizon: S) -> Self {
        let dt_grid = horizon / S::lit(1e4);
        Self {
            horizon,
            dt_grid,
            ode_step: dt_grid / S::lit(4.0),
            hazard_tol: S::lit(1e-10),
            q_max: S::lit(1e12),
            x_max: S::lit(1e12),
            seed: 0,
            path_index: 0,
            sampling: JumpSampling::HazardInversion,
            audit_jumps: true,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_path_index(mut self, index: u64) -> Self {
        self.path_index = index;
        self
    }

    /// Sets the grid spacing and resets `ode_step` to a quarter of it.
    pub fn with_grid(mut self, dt_grid: S) -> Self {
        self.dt_grid = dt_grid;
        self.ode_step = dt_grid / S::lit(4.0);
        self
    }

    pub fn with_ode_step(mut self, step: S) -> Self {
        self.ode_step = step;
        self
    }

    pub fn with_hazard_tol(mut self, tol: S) -> Self {
        self.hazard_tol = tol;
        self
    }

    pub fn with_caps(mut self, q_max: S, x_max: S) -> Self {
        self.q_max = q_max;
        self.x_max = x_max;
        self
    }

    pub fn with_sampling(mut self, sampling: JumpSampling<S>) -> Self {
        self.sampling = sampling;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("horizon", self.horizon),
            ("dt_grid", self.dt_grid),
            ("ode_step", self.ode_step),
            ("hazard_tol", self.hazard_tol),
            ("q_max", self.q_max),
            ("x_max", self.x_max),
        ];
        for (name, v) in positive {
            if !(v > S::zero()) || v.is_nan() {
                return Err(SimError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.horizon.is_finite() || !self.dt_grid.is_finite() || !self.ode_step.is_finite() {
            return Err(SimError::Config("horizon and steps must be finite".into()));
        }
        if self.ode_step > self.dt_grid {
            return Err(SimError::Config(format!(
                "ode_step {} exceeds dt_grid {}",
                self.ode_step, self.dt_grid
            )));
        }
        if let JumpSampling::Thinning { rate_bound } = self.sampling {
            if !(rate_bound > S::zero()) || !rate_bound.is_finite() {
                return Err(SimError::Config(format!("thinning bound must be positive, got {rate_bound}")));
            }
        }
        Ok(())
    }
}
