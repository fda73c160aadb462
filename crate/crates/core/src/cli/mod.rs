//! Command-line front end: argument parsing and subcommand dispatch.

pub mod config;
pub mod pipeline;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Result;

pub use config::{parse_list, ChannelChoice, DataSource, LeadFieldSource, PipelineConfig};

#[derive(Debug, Parser)]
#[command(name = "handkin", version, about = "Decode hand kinematics from EEG")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory (overrides `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Comma-separated subset of mlr, mlp, cnnlstm, wpd-cnnlstm.
    #[arg(long, global = true)]
    pub models: Option<String>,

    /// Comma-separated subset of delta, theta, alpha, entire.
    #[arg(long, global = true)]
    pub bands: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Resample, filter, re-reference, gate, split and standardize.
    Prep,
    /// Write a seeded synthetic corpus.
    Synth,
    /// Rank channels and time regional activations with sLORETA.
    Localize,
    /// Fit every configured decoder on every configured band.
    Train,
    /// Score decoders on the test partition and compare methods.
    Eval,
    /// localize, prep, train and eval in sequence.
    All,
}

impl Cli {
    /// The file configuration with command-line overrides applied.
    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        if let Some(models) = &self.models {
            cfg.set("models", models)?;
        }
        if let Some(bands) = &self.bands {
            cfg.set("bands", bands)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.pipeline_config()?;
    match cli.command {
        Command::Prep => pipeline::cmd_prep(&cfg).map(drop),
        Command::Synth => pipeline::cmd_synth(&cfg).map(drop),
        Command::Localize => pipeline::cmd_localize(&cfg).map(drop),
        Command::Train => pipeline::cmd_train(&cfg).map(drop),
        Command::Eval => pipeline::cmd_eval(&cfg).map(drop),
        Command::All => pipeline::cmd_all(&cfg).map(drop),
    }
}
