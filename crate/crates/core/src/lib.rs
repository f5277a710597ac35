//! Hybrid jump processes: specification, exact simulation, concentration bounds and
//! Monte Carlo verification.
//!
//! Everything numeric is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix `f64`, which is what the tooling and the CLI use.

pub mod process;
pub mod rng;
pub mod scalar;
pub mod bounds;
pub mod mc;
pub mod models;
pub mod sim;

pub use mc::{EnsembleConfig, McError, McReport};
pub use process::{Channel, DriftReport, HjpError, JumpKernel, ProcessSpec};
pub use scalar::Scalar;
pub use sim::{Path, SimConfig, SimError, Terminal};

pub type Spec = ProcessSpec<f64>;
pub type Config = SimConfig<f64>;
pub type SamplePath = Path<f64>;
pub type Ensemble = EnsembleConfig<f64>;
