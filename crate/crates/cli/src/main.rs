mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "jumpcalc", version, about = "Simulate hybrid jump processes and check concentration bounds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one path and write it as CSV (or JSON) with its binary manifest.
    Simulate(Common),
    /// Run a Monte Carlo verification; exits 1 when a bound is violated.
    Verify(Common),
    /// Evaluate κ, ψ, Γ⁻¹ and the lemma bounds.
    Bounds(BoundsArgs),
    /// Tabulate log κ along a c_Δ grid.
    Sweep(Common),
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `sim.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for ensembles; 0 uses every core.
    #[arg(long, env = "JUMPCALC_THREADS", default_value_t = 0)]
    threads: usize,
    /// Output directory; without it the main output goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args, Debug, Clone)]
pub struct BoundsArgs {
    /// `c=<c_Δ> gamma=<γ> a=<a>`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    kappa: Vec<String>,
    /// `y=<y>`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    psi: Vec<String>,
    /// `y=<y>`.
    #[arg(long = "gamma-inv", num_args = 1.., value_name = "KEY=VALUE")]
    gamma_inv: Vec<String>,
    /// `x=<x>`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    gamma: Vec<String>,
    /// `gamma=<γ> c=<c_Δ>`.
    #[arg(long = "lambda-c", num_args = 1.., value_name = "KEY=VALUE")]
    lambda_c: Vec<String>,
    /// `lambda=<λ> a=<a> c=<c_Δ> qvar=<⟨X⟩>`.
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    envelope: Vec<String>,
    /// Config whose query (lemma, ode_approx or sweep) is evaluated without simulation.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Exit status of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Violated,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Verify(a) => commands::verify(&a),
        Command::Bounds(a) => commands::bounds(&a),
        Command::Sweep(a) => commands::sweep(&a),
    };
    match result {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Violated) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
