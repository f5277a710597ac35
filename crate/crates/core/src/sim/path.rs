use super::engine::{simulate_with, PathObserver, Sample, SampleKind};
use super::{SimConfig, SimError, Terminal};
use crate::process::ProcessSpec;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct JumpEvent<S> {
    pub t: S,
    /// Uniform mark that selected the jump.
    pub u: S,
    pub pre: Vec<S>,
    pub post: Vec<S>,
}

/// Recorded sample. Grid points include the pre- and post-jump states of every event
/// and the terminal state, tagged by `kind`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint<S> {
    pub t: S,
    pub kind: SampleKind,
    pub x: Vec<S>,
    /// `∫₀ᵗ μ ds` per coordinate.
    pub int_drift: Vec<S>,
    /// `∫₀ᵗ σ² ds` per coordinate.
    pub int_diff: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Path<S> {
    pub events: Vec<JumpEvent<S>>,
    pub grid: Vec<GridPoint<S>>,
    pub terminal: Terminal,
    pub x0: Vec<S>,
    /// Fingerprint of the generating spec.
    pub fingerprint: u64,
    pub cfg: SimConfig<S>,
}

impl<S: Scalar> Path<S> {
    pub fn final_point(&self) -> &GridPoint<S> {
        self.grid.last().expect("a path always records its initial state")
    }

    pub fn final_state(&self) -> &[S] {
        &self.final_point().x
    }

    pub fn t_end(&self) -> S {
        self.final_point().t
    }
}

/// Observer that stores every sample into a [`Path`].
#[derive(Debug, Default)]
pub struct PathRecorder<S> {
    pub events: Vec<JumpEvent<S>>,
    pub grid: Vec<GridPoint<S>>,
    pending_pre: Option<Vec<S>>,
}

impl<S: Scalar> PathRecorder<S> {
    pub fn new() -> Self {
        Self { events: Vec::new(), grid: Vec::new(), pending_pre: None }
    }
}

impl<S: Scalar> PathObserver<S> for PathRecorder<S> {
    fn observe(&mut self, s: &Sample<'_, S>) {
        match s.kind {
            SampleKind::PreJump => self.pending_pre = Some(s.x.to_vec()),
            SampleKind::PostJump => {
                let pre = self.pending_pre.take().expect("post-jump sample follows a pre-jump sample");
                self.events.push(JumpEvent {
                    t: s.t,
                    u: s.mark.unwrap_or_else(S::zero),
                    pre,
                    post: s.x.to_vec(),
                });
            }
            _ => {}
        }
        self.grid.push(GridPoint {
            t: s.t,
            kind: s.kind,
            x: s.x.to_vec(),
            int_drift: s.int_drift.to_vec(),
            int_diff: s.int_diff.to_vec(),
        });
    }
}

/// Simulates and records one path.
pub fn simulate<S: Scalar>(
    spec: &ProcessSpec<S>,
    x0: &[S],
    cfg: &SimConfig<S>,
    stop: Option<&(dyn Fn(&[S]) -> bool + Sync)>,
) -> Result<Path<S>, SimError> {
    let mut rec = PathRecorder::new();
    let summary = simulate_with(spec, x0, cfg, stop, &[], &mut rec)?;
    Ok(Path {
        events: rec.events,
        grid: rec.grid,
        terminal: summary.terminal,
        x0: x0.to_vec(),
        fingerprint: spec.fingerprint(),
        cfg: *cfg,
    })
}

/// Compensator `X̄ = X₀ + ∫μ`, martingale part `M = X − X̄` and quadratic variation
/// `⟨X⟩ = ∫σ²` at every recorded time. Vectors are flattened row-major, `dim` values
/// per time.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStatistics<S> {
    pub dim: usize,
    pub times: Vec<S>,
    pub kinds: Vec<SampleKind>,
    pub compensator: Vec<S>,
    pub martingale: Vec<S>,
    pub qvar: Vec<S>,
}

impl<S: Scalar> PathStatistics<S> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn martingale_at(&self, i: usize) -> &[S] {
        &self.martingale[i * self.dim..(i + 1) * self.dim]
    }

    pub fn qvar_at(&self, i: usize) -> &[S] {
        &self.qvar[i * self.dim..(i + 1) * self.dim]
    }

    /// `sup |M_t|` of coordinate `coord` over recorded times.
    pub fn sup_abs_martingale(&self, coord: usize) -> S {
        (0..self.len()).fold(S::zero(), |m, i| m.max(self.martingale_at(i)[coord].abs()))
    }
}

pub fn compensated_path<S: Scalar>(spec: &ProcessSpec<S>, path: &Path<S>) -> Result<PathStatistics<S>, SimError> {
    if path.fingerprint != spec.fingerprint() {
        return Err(SimError::FingerprintMismatch { path: path.fingerprint, spec: spec.fingerprint() });
    }
    let dim = path.x0.len();
    let n = path.grid.len();
    let mut stats = PathStatistics {
        dim,
        times: Vec::with_capacity(n),
        kinds: Vec::with_capacity(n),
        compensator: Vec::with_capacity(n * dim),
        martingale: Vec::with_capacity(n * dim),
        qvar: Vec::with_capacity(n * dim),
    };
    for g in &path.grid {
        stats.times.push(g.t);
        stats.kinds.push(g.kind);
        for i in 0..dim {
            let comp = path.x0[i] + g.int_drift[i];
            stats.compensator.push(comp);
            stats.martingale.push(g.x[i] - comp);
            stats.qvar.push(g.int_diff[i]);
        }
    }
    Ok(stats)
}

/// Target set of a first-passage query.
pub enum Region<'a, S> {
    AtLeast { coord: usize, level: S },
    AtMost { coord: usize, level: S },
    Predicate(&'a (dyn Fn(&[S]) -> bool + Sync)),
}

impl<S: Scalar> Region<'_, S> {
    pub fn contains(&self, x: &[S]) -> bool {
        match self {
            Region::AtLeast { coord, level } => x[*coord] >= *level,
            Region::AtMost { coord, level } => x[*coord] <= *level,
            Region::Predicate(p) => p(x),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FirstPassage<S> {
    /// Hitting time, `None` when censored at the horizon or truncated.
    pub time: Option<S>,
    pub path: Path<S>,
}

pub fn first_passage<S: Scalar>(
    spec: &ProcessSpec<S>,
    x0: &[S],
    cfg: &SimConfig<S>,
    region: &Region<'_, S>,
) -> Result<FirstPassage<S>, SimError> {
    if let Region::AtLeast { coord, .. } | Region::AtMost { coord, .. } = region {
        if *coord >= spec.dim() {
            return Err(SimError::Config(format!("coordinate {coord} out of range for dimension {}", spec.dim())));
        }
    }
    let pred = |x: &[S]| region.contains(x);
    let path = simulate(spec, x0, cfg, Some(&pred))?;
    let time = (path.terminal == Terminal::StoppedByPredicate).then(|| path.t_end());
    Ok(FirstPassage { time, path })
}
