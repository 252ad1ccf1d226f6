//! Command-line front end: simulate data, fit, predict, compare against the
//! sampler, and replay earlier runs from their manifests.

mod commands;
mod failure;
mod io;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CompareArgs, FitArgs, Invocation, PredictArgs, SimulateArgs};

#[derive(Parser)]
#[command(name = "dirlaplace", version, about = "Bayesian Dirichlet regression by Gaussian pseudo-observations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw covariates and Dirichlet responses from known coefficients.
    Simulate(SimulateArgs),
    /// Fit a model and write the summary, fit.json and plot data.
    Fit(FitArgs),
    /// Predictive summaries at new covariate rows from a saved fit.
    Predict(PredictArgs),
    /// Fit, run the Metropolis reference and report their agreement.
    Compare(CompareArgs),
    /// Rerun the command recorded in a manifest.json.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Write outputs here instead of the recorded directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => Invocation::Simulate(a).run(),
        Command::Fit(a) => Invocation::Fit(a).run(),
        Command::Predict(a) => Invocation::Predict(a).run(),
        Command::Compare(a) => Invocation::Compare(a).run(),
        Command::Replay { manifest, out } => commands::replay(&manifest, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
