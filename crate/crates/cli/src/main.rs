//! `spt`: train segment-phrase tables, segment images with them, and score
//! phrase relations.

mod manifest;
mod output;
mod relations;
mod segment;
mod synth;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use spt_core::{Config, ConfigError, GmmError, LatentError, LinguisticsError};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "spt", version, about = "Segment-phrase tables: weakly supervised segmentation and visual phrase relations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a segmentation model per phrase component from boxed images.
    Train(train::TrainArgs),
    /// Segment an image from phrase detections using a trained table.
    Segment(segment::SegmentArgs),
    /// Score entailment, paraphrase or relative-similarity datasets.
    Relations(relations::RelationsArgs),
    /// Write a synthetic corpus with ground truth for end-to-end runs.
    Synth(synth::SynthArgs),
}

/// Options shared by every subcommand.
#[derive(Debug, Args)]
struct Common {
    /// `key = value` settings file; flags override it.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for per-image and per-pair work (default: all cores).
    #[arg(long, value_name = "N", value_parser = clap::value_parser!(u64).range(1..))]
    jobs: Option<u64>,
    /// Contrast sensitivity of the pairwise term.
    #[arg(long)]
    lambda: Option<f64>,
    /// Per-edge sparsity cost of the entailment graph.
    #[arg(long = "ilp-lambda")]
    ilp_lambda: Option<f64>,
    /// Exemplar masks kept per phrase.
    #[arg(long)]
    k: Option<usize>,
    /// Paraphrase threshold on the entailment-score gap.
    #[arg(long)]
    tau: Option<f64>,
}

impl Common {
    fn config(&self) -> anyhow::Result<Config> {
        let mut c = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.lambda {
            c.lambda = v;
        }
        if let Some(v) = self.ilp_lambda {
            c.ilp_lambda = v;
        }
        if let Some(v) = self.k {
            c.k_exemplars = v;
        }
        if let Some(v) = self.tau {
            c.paraphrase_tau = v;
        }
        c.validate()?;
        Ok(c)
    }

    fn install_pool(&self) -> anyhow::Result<()> {
        if let Some(n) = self.jobs {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n as usize)
                .build_global()
                .context("configuring the worker pool")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Entail,
    Paraphrase,
    Simrel,
}

/// Bad combination of otherwise well-formed arguments.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct Usage(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Usage problems exit 1, numerical failures 3, everything else 2.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = |c: &(dyn std::error::Error + 'static)| {
        c.downcast_ref::<LatentError>().is_some_and(LatentError::is_numerical)
            || matches!(c.downcast_ref::<GmmError>(), Some(GmmError::NonMonotone { .. }))
            || c.downcast_ref::<spt_core::Error>().is_some_and(spt_core::Error::is_numerical)
            || matches!(c.downcast_ref::<LinguisticsError>(), Some(LinguisticsError::Latent(e)) if e.is_numerical())
    };
    if err.chain().any(|c| c.is::<Usage>() || c.is::<ConfigError>()) {
        EXIT_USAGE
    } else if err.chain().any(numerical) {
        EXIT_NUMERICAL
    } else {
        EXIT_DATA
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Train(a) => train::run(a),
        Command::Segment(a) => segment::run(a),
        Command::Relations(a) => relations::run(a),
        Command::Synth(a) => synth::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
