//! Run configuration: one JSON document with `model`, `sim` and `query` sections.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use jumpcalc::bounds::SweepRegime;
use jumpcalc::mc::{Censoring, IntermediateQuery, LemmaExperiment, MartingaleQuery, OdeQuery, SamplePathQuery};
use jumpcalc::models::{
    birth_death, constant_flow, lattice_walk, linear_flow, poisson_counter, sis, sis_deviation_process, yule,
    SisParams,
};
use jumpcalc::{Ensemble, SimConfig, Spec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub query: Option<Query>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Poisson { rate: f64 },
    BirthDeath { birth: f64, death: f64 },
    LatticeWalk { step: f64, up: f64, down: f64 },
    Yule { rate: f64 },
    LinearFlow { a: f64 },
    ConstantFlow { velocity: f64 },
    Sis { n: u64, lambda: f64, #[serde(default)] rescaled: bool },
    SisDeviation { n: u64, lambda: f64, #[serde(default)] time_changed: bool },
}

impl ModelConfig {
    pub fn build(&self) -> Result<Spec> {
        Ok(match *self {
            ModelConfig::Poisson { rate } => poisson_counter(rate)?,
            ModelConfig::BirthDeath { birth, death } => birth_death(birth, death)?,
            ModelConfig::LatticeWalk { step, up, down } => lattice_walk(step, up, down)?,
            ModelConfig::Yule { rate } => yule(rate)?,
            ModelConfig::LinearFlow { a } => linear_flow(a)?,
            ModelConfig::ConstantFlow { velocity } => constant_flow(velocity)?,
            ModelConfig::Sis { n, lambda, rescaled } => sis(SisParams::new(n, lambda, rescaled))?,
            ModelConfig::SisDeviation { n, lambda, time_changed } => {
                sis_deviation_process(SisParams::new(n, lambda, true), time_changed)?
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default)]
    pub x0: Vec<f64>,
    #[serde(default)]
    pub dt_grid: Option<f64>,
    #[serde(default)]
    pub ode_step: Option<f64>,
    #[serde(default)]
    pub hazard_tol: Option<f64>,
    #[serde(default)]
    pub q_max: Option<f64>,
    #[serde(default)]
    pub x_max: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_paths")]
    pub n_paths: u64,
    #[serde(default)]
    pub censoring: Censoring,
}

fn default_paths() -> u64 {
    1000
}

impl Default for SimSection {
    fn default() -> Self {
        Self {
            horizon: None,
            x0: Vec::new(),
            dt_grid: None,
            ode_step: None,
            hazard_tol: None,
            q_max: None,
            x_max: None,
            seed: 0,
            n_paths: default_paths(),
            censoring: Censoring::default(),
        }
    }
}

impl SimSection {
    /// Engine configuration; the horizon defaults to `fallback` when given.
    pub fn sim_config(&self, fallback: Option<f64>) -> Result<SimConfig<f64>> {
        let horizon = match self.horizon.or(fallback) {
            Some(h) => h,
            None => bail!("sim.horizon: required"),
        };
        if !(horizon > 0.0) || !horizon.is_finite() {
            bail!("sim.horizon: must be positive and finite, got {horizon}");
        }
        let mut c = SimConfig::new(horizon).with_seed(self.seed);
        if let Some(dt) = self.dt_grid {
            if !(dt > 0.0) {
                bail!("sim.dt_grid: must be positive, got {dt}");
            }
            c = c.with_grid(dt);
        }
        if let Some(h) = self.ode_step {
            if !(h > 0.0) {
                bail!("sim.ode_step: must be positive, got {h}");
            }
            c = c.with_ode_step(h);
        }
        if let Some(v) = self.hazard_tol {
            c.hazard_tol = v;
        }
        if let Some(v) = self.q_max {
            c.q_max = v;
        }
        if let Some(v) = self.x_max {
            c.x_max = v;
        }
        Ok(c)
    }

    pub fn ensemble(&self, threads: usize, fallback: Option<f64>) -> Result<Ensemble> {
        if self.n_paths == 0 {
            bail!("sim.n_paths: must be positive");
        }
        let ens = Ensemble::new(self.n_paths, self.sim_config(fallback)?)
            .with_threads(threads)
            .with_censoring(self.censoring);
        ens.validate().context("sim")?;
        Ok(ens)
    }
}

/// Verification or bound selected by the `kind` key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Query {
    SamplePath(SamplePathQuery<f64>),
    Martingale(MartingaleQuery<f64>),
    /// One-dimensional processes; use `martingale` to pick a coordinate.
    ExponentialMartingale { lambda: f64 },
    QuadraticMartingale,
    Lemma(LemmaExperiment<f64>),
    OdeApprox(OdeQuery<f64>),
    LogisticIntermediate(IntermediateQuery<f64>),
    Sweep { regime: SweepRegime<f64>, grid: SweepGrid },
}

/// Either explicit `c_Δ` values or `points` log-spaced values from `from` to `to`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepGrid {
    Values(Vec<f64>),
    LogSpaced { from: f64, to: f64, points: usize },
}

impl SweepGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        match *self {
            SweepGrid::Values(ref v) if v.is_empty() => bail!("query.grid: empty"),
            SweepGrid::Values(ref v) => Ok(v.clone()),
            SweepGrid::LogSpaced { from, to, points } => {
                if !(from > 0.0 && to > 0.0) || points == 0 {
                    bail!("query.grid: need positive endpoints and at least one point");
                }
                if points == 1 {
                    return Ok(vec![from]);
                }
                let (a, b) = (from.ln(), to.ln());
                Ok((0..points).map(|i| (a + (b - a) * i as f64 / (points - 1) as f64).exp()).collect())
            }
        }
    }
}

impl Query {
    pub fn name(&self) -> &'static str {
        match self {
            Query::SamplePath(_) => "sample_path",
            Query::Martingale(_) => "martingale",
            Query::ExponentialMartingale { .. } => "exponential_martingale",
            Query::QuadraticMartingale => "quadratic_martingale",
            Query::Lemma(_) => "lemma",
            Query::OdeApprox(_) => "ode_approx",
            Query::LogisticIntermediate(_) => "logistic_intermediate",
            Query::Sweep { .. } => "sweep",
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| anyhow!("{}: {}", e.path(), e.inner()))?;
        Ok(cfg)
    }

    pub fn model(&self) -> Result<Spec> {
        match &self.model {
            Some(m) => m.build().context("model"),
            None => bail!("model: required for this command"),
        }
    }

    pub fn query(&self) -> Result<&Query> {
        self.query.as_ref().context("query: required for this command")
    }

    /// Initial state, checked against the model's dimension.
    pub fn x0(&self, spec: &Spec) -> Result<Vec<f64>> {
        let x0 = &self.sim.x0;
        if x0.len() != spec.dim() {
            bail!("sim.x0: expected {} values for {}, got {}", spec.dim(), spec.descriptor(), x0.len());
        }
        Ok(x0.clone())
    }

    /// SHA-256 over the command name and the canonical JSON of the resolved config.
    pub fn hash(&self, command: &str) -> String {
        let mut h = Sha256::new();
        h.update(command.as_bytes());
        h.update([0u8]);
        h.update(serde_json::to_vec(self).expect("config serializes"));
        hex::encode(h.finalize())
    }
}
