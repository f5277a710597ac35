use smallvec::SmallVec;

use super::{JumpSampling, SimConfig, SimError, Terminal};
use crate::process::{Buf, ProcessSpec};
use crate::rng::PathRng;
use crate::scalar::{all_finite, sup_norm, Scalar};

/// Extra scalar integrand accumulated along the path with the engine's quadrature.
pub type Integrand<'a, S> = &'a (dyn Fn(&[S]) -> S + Sync);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Grid,
    PreJump,
    PostJump,
    Final,
}

/// Snapshot handed to observers: state plus the running integrals `∫μ ds`, `∫σ² ds` and
/// the extra integrands, all at time `t`.
#[derive(Debug)]
pub struct Sample<'a, S> {
    pub t: S,
    pub kind: SampleKind,
    pub x: &'a [S],
    pub int_drift: &'a [S],
    pub int_diff: &'a [S],
    pub extras: &'a [S],
    /// Jump mark `u` (post-jump samples only).
    pub mark: Option<S>,
}

pub trait PathObserver<S> {
    fn observe(&mut self, sample: &Sample<'_, S>);

    /// Polled after every jump and flow step; `true` ends the path as stopped.
    fn wants_stop(&self) -> bool {
        false
    }
}

impl<S, O: PathObserver<S> + ?Sized> PathObserver<S> for &mut O {
    fn observe(&mut self, sample: &Sample<'_, S>) {
        (**self).observe(sample)
    }
    fn wants_stop(&self) -> bool {
        (**self).wants_stop()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary<S> {
    pub terminal: Terminal,
    pub t_end: S,
    pub n_events: usize,
}

#[derive(Clone)]
struct Aug<S: Scalar> {
    t: S,
    x: Buf<S>,
    imu: Buf<S>,
    is2: Buf<S>,
    ext: Buf<S>,
    hazard: S,
}

/// Integrand values at one state.
struct Eval<S: Scalar> {
    q: S,
    d: Buf<S>,
    mu: Buf<S>,
    s2: Buf<S>,
    ext: Buf<S>,
}

enum Advance {
    Reached,
    Fired,
    Stopped,
    Truncated(Terminal),
}

struct Engine<'a, S: Scalar, O> {
    spec: &'a ProcessSpec<S>,
    cfg: &'a SimConfig<S>,
    stop: Option<&'a (dyn Fn(&[S]) -> bool + Sync)>,
    extras: &'a [Integrand<'a, S>],
    obs: O,
    rng: PathRng,
    next_grid: u64,
    n_events: usize,
}

/// Simulates one path, streaming samples to `observer`.
///
/// `stop` ends the path the first time it holds (localized inside flow steps), and
/// `extras` are integrated alongside `∫μ` and `∫σ²`.
pub fn simulate_with<S: Scalar, O: PathObserver<S>>(
    spec: &ProcessSpec<S>,
    x0: &[S],
    cfg: &SimConfig<S>,
    stop: Option<&(dyn Fn(&[S]) -> bool + Sync)>,
    extras: &[Integrand<'_, S>],
    observer: O,
) -> Result<Summary<S>, SimError> {
    cfg.validate()?;
    if !spec.is_autonomous() {
        return Err(SimError::NotAutonomous);
    }
    if x0.len() != spec.dim() {
        return Err(SimError::Dimension { expected: spec.dim(), got: x0.len() });
    }
    if !all_finite(x0) {
        return Err(SimError::NonFinite { last_valid_time: 0.0 });
    }
    let mut engine = Engine {
        spec,
        cfg,
        stop,
        extras,
        obs: observer,
        rng: PathRng::new(cfg.seed, cfg.path_index),
        next_grid: 0,
        n_events: 0,
    };
    engine.run(x0)
}

impl<'a, S: Scalar, O: PathObserver<S>> Engine<'a, S, O> {
    fn zeros(&self, n: usize) -> Buf<S> {
        SmallVec::from_elem(S::zero(), n)
    }

    fn emit(&mut self, a: &Aug<S>, kind: SampleKind, mark: Option<S>) {
        self.obs.observe(&Sample {
            t: a.t,
            kind,
            x: &a.x,
            int_drift: &a.imu,
            int_diff: &a.is2,
            extras: &a.ext,
            mark,
        });
    }

    fn finish(&mut self, a: &Aug<S>, terminal: Terminal) -> Summary<S> {
        self.emit(a, SampleKind::Final, None);
        Summary { terminal, t_end: a.t, n_events: self.n_events }
    }

    fn eval(&self, x: &[S], t: S) -> Result<Eval<S>, SimError> {
        let d = self.spec.dim();
        let mut e = Eval {
            q: S::zero(),
            d: self.zeros(d),
            mu: self.zeros(d),
            s2: self.zeros(d),
            ext: self.extras.iter().map(|f| f(x)).collect(),
        };
        if self.spec.has_clock() {
            let k = self.spec.clock(x);
            if !(k > S::zero()) || !k.is_finite() {
                return Err(SimError::Clock { value: k.as_f64(), t: t.as_f64() });
            }
        }
        e.q = self.spec.moments_into(x, &mut e.mu, &mut e.s2);
        if !(e.q >= S::zero()) || !e.q.is_finite() {
            return Err(SimError::BadRate { rate: e.q.as_f64(), t: t.as_f64() });
        }
        if self.spec.has_flow() {
            self.spec.derivative_into(x, &mut e.d);
        }
        if !all_finite(&e.mu) || !all_finite(&e.s2) || !all_finite(&e.d) || !all_finite(&e.ext) {
            return Err(SimError::NonFinite { last_valid_time: t.as_f64() });
        }
        Ok(e)
    }

    /// State at `t_target`, starting from `cur` whose integrands are `e0`.
    fn propagate(&self, cur: &Aug<S>, e0: &Eval<S>, t_target: S) -> Result<Aug<S>, SimError> {
        let h = t_target - cur.t;
        let mut out = cur.clone();
        out.t = t_target;
        if !self.spec.has_flow() {
            for i in 0..cur.x.len() {
                out.imu[i] += h * e0.mu[i];
                out.is2[i] += h * e0.s2[i];
            }
            for j in 0..cur.ext.len() {
                out.ext[j] += h * e0.ext[j];
            }
            out.hazard += h * e0.q;
            return Ok(out);
        }
        let half = h / S::lit(2.0);
        let stage = |k: &Buf<S>, scale: S| -> Buf<S> {
            cur.x.iter().zip(k.iter()).map(|(&x, &k)| x + scale * k).collect()
        };
        let x2 = stage(&e0.d, half);
        let e2 = self.eval(&x2, cur.t + half).map_err(|_| SimError::NonFinite { last_valid_time: cur.t.as_f64() })?;
        let x3 = stage(&e2.d, half);
        let e3 = self.eval(&x3, cur.t + half).map_err(|_| SimError::NonFinite { last_valid_time: cur.t.as_f64() })?;
        let x4 = stage(&e3.d, h);
        let e4 = self.eval(&x4, t_target).map_err(|_| SimError::NonFinite { last_valid_time: cur.t.as_f64() })?;
        let sixth = h / S::lit(6.0);
        let two = S::lit(2.0);
        let combine = |a: S, b: S, c: S, d: S| sixth * (a + two * b + two * c + d);
        for i in 0..cur.x.len() {
            out.x[i] += combine(e0.d[i], e2.d[i], e3.d[i], e4.d[i]);
            out.imu[i] += combine(e0.mu[i], e2.mu[i], e3.mu[i], e4.mu[i]);
            out.is2[i] += combine(e0.s2[i], e2.s2[i], e3.s2[i], e4.s2[i]);
        }
        for j in 0..cur.ext.len() {
            out.ext[j] += combine(e0.ext[j], e2.ext[j], e3.ext[j], e4.ext[j]);
        }
        out.hazard += combine(e0.q, e2.q, e3.q, e4.q);
        if !all_finite(&out.x) {
            return Err(SimError::NonFinite { last_valid_time: cur.t.as_f64() });
        }
        Ok(out)
    }

    fn grid_time(&self, k: u64) -> S {
        S::from_u64(k).expect("grid index fits scalar") * self.cfg.dt_grid
    }

    /// Emits grid samples with times in `(cur.t, end.t]`, strictly before the horizon.
    fn emit_grid(&mut self, cur: &Aug<S>, e0: &Eval<S>, end: &Aug<S>) -> Result<(), SimError> {
        loop {
            let g = self.grid_time(self.next_grid);
            if g >= self.cfg.horizon || g > end.t {
                return Ok(());
            }
            if g > cur.t {
                if g == end.t {
                    self.emit(end, SampleKind::Grid, None);
                } else {
                    let a = self.propagate(cur, e0, g)?;
                    self.emit(&a, SampleKind::Grid, None);
                }
            }
            self.next_grid += 1;
        }
    }

    /// Smallest time in `(lo, hi]` at which `hit` holds, to `hazard_tol`. `hit(hi_state)`
    /// must hold.
    fn bisect(
        &self,
        cur: &Aug<S>,
        e0: &Eval<S>,
        mut hi_state: Aug<S>,
        hit: impl Fn(&Aug<S>) -> bool,
    ) -> Result<Aug<S>, SimError> {
        let mut lo = cur.t;
        let mut hi = hi_state.t;
        for _ in 0..200 {
            if hi - lo <= self.cfg.hazard_tol {
                break;
            }
            let mid = lo + (hi - lo) / S::lit(2.0);
            if mid <= lo || mid >= hi {
                break;
            }
            let s = self.propagate(cur, e0, mid)?;
            if hit(&s) {
                hi = mid;
                hi_state = s;
            } else {
                lo = mid;
            }
        }
        Ok(hi_state)
    }

    fn truncation(&self, a: &Aug<S>, q: S) -> Option<Terminal> {
        if q >= self.cfg.q_max {
            Some(Terminal::TruncatedRate)
        } else if sup_norm(&a.x) >= self.cfg.x_max {
            Some(Terminal::TruncatedNorm)
        } else {
            None
        }
    }

    /// Moves `cur` forward to `t_target`, stopping early when the hazard reaches
    /// `threshold`, the stop rule fires, or a cap is hit.
    fn advance(&mut self, cur: &mut Aug<S>, t_target: S, threshold: Option<S>) -> Result<Advance, SimError> {
        loop {
            if cur.t >= t_target {
                return Ok(Advance::Reached);
            }
            let e0 = self.eval(&cur.x, cur.t)?;
            if let Some(term) = self.truncation(cur, e0.q) {
                return Ok(Advance::Truncated(term));
            }
            if !self.spec.has_flow() {
                // Frozen state: the hazard is linear and the stop rule cannot change.
                let mut end_t = t_target;
                let mut fired = false;
                if let Some(thr) = threshold {
                    if e0.q > S::zero() {
                        let t_fire = cur.t + (thr - cur.hazard) / e0.q;
                        if t_fire < t_target {
                            end_t = t_fire;
                            fired = true;
                        }
                    }
                }
                let end = self.propagate(cur, &e0, end_t)?;
                self.emit_grid(cur, &e0, &end)?;
                *cur = end;
                return Ok(if fired { Advance::Fired } else { Advance::Reached });
            }
            let step_end = (cur.t + self.cfg.ode_step).min(t_target);
            let mut cand = self.propagate(cur, &e0, step_end)?;
            let mut outcome = None;
            if let Some(thr) = threshold {
                if cand.hazard >= thr {
                    cand = self.bisect(cur, &e0, cand, |a| a.hazard >= thr)?;
                    outcome = Some(Advance::Fired);
                }
            }
            if let Some(stop) = self.stop {
                if stop(&cand.x) {
                    cand = self.bisect(cur, &e0, cand, |a| stop(&a.x))?;
                    outcome = Some(Advance::Stopped);
                }
            }
            self.emit_grid(cur, &e0, &cand)?;
            *cur = cand;
            if let Some(o) = outcome {
                return Ok(o);
            }
            if sup_norm(&cur.x) >= self.cfg.x_max {
                return Ok(Advance::Truncated(Terminal::TruncatedNorm));
            }
            if self.obs.wants_stop() {
                return Ok(Advance::Stopped);
            }
        }
    }

    fn jump(&mut self, cur: &mut Aug<S>, u: S) -> Result<(), SimError> {
        self.emit(cur, SampleKind::PreJump, None);
        let mut disp = self.zeros(cur.x.len());
        self.spec.jump_into(&cur.x, u, &mut disp);
        if self.cfg.audit_jumps && !self.spec.respects_jump_bound(&disp) {
            return Err(SimError::JumpBound {
                size: sup_norm(&disp).as_f64(),
                bound: self.spec.c_delta().as_f64(),
                t: cur.t.as_f64(),
            });
        }
        for (x, d) in cur.x.iter_mut().zip(disp.iter()) {
            *x += *d;
        }
        if !all_finite(&cur.x) {
            return Err(SimError::NonFinite { last_valid_time: cur.t.as_f64() });
        }
        self.n_events += 1;
        self.emit(cur, SampleKind::PostJump, Some(u));
        Ok(())
    }

    /// Checks run after every jump. Returns the terminal reason if the path must end.
    fn after_jump(&self, cur: &Aug<S>) -> Option<Terminal> {
        if self.stop.is_some_and(|s| s(&cur.x)) || self.obs.wants_stop() {
            return Some(Terminal::StoppedByPredicate);
        }
        if sup_norm(&cur.x) >= self.cfg.x_max {
            return Some(Terminal::TruncatedNorm);
        }
        None
    }

    fn run(&mut self, x0: &[S]) -> Result<Summary<S>, SimError> {
        let d = x0.len();
        let mut cur = Aug {
            t: S::zero(),
            x: x0.iter().copied().collect(),
            imu: self.zeros(d),
            is2: self.zeros(d),
            ext: self.zeros(self.extras.len()),
            hazard: S::zero(),
        };
        self.emit(&cur, SampleKind::Grid, None);
        self.next_grid = 1;
        if self.stop.is_some_and(|s| s(&cur.x)) {
            return Ok(self.finish(&cur, Terminal::StoppedByPredicate));
        }
        let horizon = self.cfg.horizon;
        loop {
            let outcome = match self.cfg.sampling {
                JumpSampling::HazardInversion => {
                    let threshold = S::lit(self.rng.exp1());
                    cur.hazard = S::zero();
                    match self.advance(&mut cur, horizon, Some(threshold))? {
                        Advance::Fired => {
                            let u = S::lit(self.rng.uniform());
                            self.jump(&mut cur, u)?;
                            None
                        }
                        other => Some(other),
                    }
                }
                JumpSampling::Thinning { rate_bound } => {
                    let gap = S::lit(self.rng.exp1()) / rate_bound;
                    let t_cand = cur.t + gap;
                    if t_cand >= horizon {
                        Some(self.advance(&mut cur, horizon, None)?)
                    } else {
                        match self.advance(&mut cur, t_cand, None)? {
                            Advance::Reached => {
                                let v = S::lit(self.rng.uniform());
                                let q = self.eval(&cur.x, cur.t)?.q;
                                if q > rate_bound {
                                    return Err(SimError::ThinningBound {
                                        bound: rate_bound.as_f64(),
                                        rate: q.as_f64(),
                                        t: cur.t.as_f64(),
                                    });
                                }
                                if v * rate_bound <= q {
                                    self.jump(&mut cur, v * rate_bound / q)?;
                                }
                                None
                            }
                            other => Some(other),
                        }
                    }
                }
            };
            let terminal = match outcome {
                None => self.after_jump(&cur),
                Some(Advance::Reached) if cur.t >= horizon => Some(Terminal::Horizon),
                Some(Advance::Reached) | Some(Advance::Fired) => None,
                Some(Advance::Stopped) => Some(Terminal::StoppedByPredicate),
                Some(Advance::Truncated(t)) => Some(t),
            };
            if let Some(t) = terminal {
                return Ok(self.finish(&cur, t));
            }
        }
    }
}
