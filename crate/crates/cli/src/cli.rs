//! Command-line parsing.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};

use crate::commands::{self, Command};
use crate::config::RunConfig;
use crate::error::UsageError;

#[derive(Debug, Parser)]
#[command(name = "flowinfer", version, about = "Infer birth-disaggregated bilateral migration flows")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
    /// JSON run configuration, or the manifest of an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; every other seed is derived from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Dataset directory.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Model directory with checkpoints.
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Training epochs.
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Ensemble size.
    #[arg(long, global = true)]
    pub members: Option<usize>,
    /// Initial-stock draws per member.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Cmd {
    /// Generate a synthetic world and its corrupted observations.
    Synth,
    /// Train one network.
    Train,
    /// Train independently seeded networks.
    Ensemble,
    /// Calibrate, push initial-stock uncertainty through the model, export.
    Estimate,
    /// Covariate elasticities of the flows.
    Elasticity,
    /// Stock-based baselines against reference flows.
    Baseline,
    /// Recovery metrics of a model against the dataset's true flows.
    Evaluate,
    /// Hyperparameter sweep on a synthetic world.
    Sweep,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Synth => Command::Synth,
            Cmd::Train => Command::Train,
            Cmd::Ensemble => Command::Ensemble,
            Cmd::Estimate => Command::Estimate,
            Cmd::Elasticity => Command::Elasticity,
            Cmd::Baseline => Command::Baseline,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::Sweep => Command::Sweep,
        }
    }
}

impl Cli {
    /// The configuration with command-line overrides applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.data {
            cfg.data = Some(d.clone());
        }
        if let Some(m) = &self.model {
            cfg.model = Some(m.clone());
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(m) = self.members {
            cfg.ensemble.members = m;
        }
        if let Some(s) = self.samples {
            cfg.estimate.samples = s;
        }
        Ok(cfg)
    }
}

/// Parse `args` (program name first) and run the command.
pub fn run<I, T>(args: I) -> Result<PathBuf>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| UsageError(e.to_string()))?;
    let cfg = cli.resolve()?;
    let out = cli.out.clone().ok_or_else(|| UsageError("--out is required".into()))?;
    commands::run(cli.command.into(), cfg, &out)
}
