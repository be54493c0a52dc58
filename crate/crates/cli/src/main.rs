//! `conceptdiff`: the pipeline from dataset rendering to sweep reports.
//!
//! Exit status is 0 on success, 2 on usage errors and 1 on any pipeline
//! error, which is reported on stderr as a single `error: <category>: <message>`
//! line.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conceptdiff::conceptbank::NegativeStrategy;
use conceptdiff::guidance::{Objective, PsiTarget};

#[derive(Debug, Parser)]
#[command(name = "conceptdiff", version, about = "Concept-informed diffusion for dataset distillation on a toy task")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Pipeline configuration file (JSON); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Global seed; every random draw derives from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Working directory for artifacts and the echoed config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Guidance options shared by `generate` and `distill`.
#[derive(Debug, Clone, Args)]
pub struct GuidanceFlags {
    /// Informing weight (comma-separated sweep values for `distill`).
    #[arg(long, value_delimiter = ',')]
    pub lambda: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub objective: Vec<Objective>,
    #[arg(long = "n-neg", value_delimiter = ',')]
    pub n_neg: Vec<usize>,
    /// random | similar:<k> | weighted
    #[arg(long, value_delimiter = ',')]
    pub strategy: Vec<NegativeStrategy>,
    /// DDIM step count.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long = "psi-target")]
    pub psi_target: Option<PsiTarget>,
    /// Images per class (comma-separated sweep values for `distill`).
    #[arg(long, value_delimiter = ',')]
    pub ipc: Vec<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render the attributed toy dataset.
    MakeData(Common),
    /// Train the class-conditional denoiser.
    TrainDdpm(Common),
    /// Train the joint image/concept embedder.
    TrainEmbed(Common),
    /// Train the noise-aware classifier used for classifier guidance.
    TrainCls(Common),
    /// Build the concept bank from the procedural source or an LLM endpoint.
    ConceptsRetrieve {
        #[command(flatten)]
        common: Common,
        /// Query the LLM endpoint named in the config instead of the procedural source.
        #[arg(long)]
        llm: bool,
    },
    /// Score retrieved concepts against real images and keep the best.
    ConceptsValidate(Common),
    /// Generate guided samples and write grids plus a run manifest.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        guidance: GuidanceFlags,
    },
    /// Run the surrogate-set sweep and append to results.csv.
    Distill {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        guidance: GuidanceFlags,
        /// Parallel sweep cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Compare reverse-mode gradients against finite differences.
    Gradcheck(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: {}: {msg}", e.category());
            ExitCode::from(1)
        }
    }
}
