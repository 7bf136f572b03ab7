//! `asr`: command-line front end for the speech recognition pipeline.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use asr_core::pipeline::{
    run_augment, run_decode, run_evaluate, run_lm_train, run_stats, run_train, PipelineConfig,
};

#[derive(Parser)]
#[command(name = "asr", about = "End-to-end character-level speech recognition")]
struct Cli {
    /// Configuration file of flat `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override `training.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override `training.n_workers`.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute corpus feature statistics from the training manifest.
    Stats,
    /// Train the acoustic model and write a checkpoint.
    Train,
    /// Mix screened noise into the training set.
    Augment,
    /// Train the n-gram language model and write it as ARPA.
    LmTrain,
    /// Decode the evaluation manifest to transcripts.
    Decode {
        /// Average posteriors over jittered copies of the audio.
        #[arg(long)]
        jitter: bool,
    },
    /// Decode and score the evaluation manifest, writing a JSON report.
    Evaluate {
        #[arg(long)]
        jitter: bool,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::from_file(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.training.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.training.n_workers = workers;
    }
    config.validate()?;
    eprint!("{}", config.echo());

    match cli.command {
        Command::Stats => {
            let stats = run_stats(&config)?;
            eprintln!(
                "wrote {}-dim stats over {} frames to {}",
                stats.dim(),
                stats.count(),
                config.paths.stats.display()
            );
        }
        Command::Train => {
            run_train(&config)?;
            eprintln!(
                "wrote checkpoint to {} (metrics: {})",
                config.paths.checkpoint.display(),
                config.paths.metrics.display()
            );
        }
        Command::Augment => {
            let entries = run_augment(&config)?;
            let flagged = entries.iter().filter(|e| e.flagged).count();
            eprintln!(
                "wrote {} augmented utterances to {} ({} flagged for clipping)",
                entries.len(),
                config.paths.output_dir.display(),
                flagged
            );
        }
        Command::LmTrain => {
            let model = run_lm_train(&config)?;
            eprintln!(
                "wrote order-{} model ({} words) to {}",
                model.order(),
                model.vocabulary().len(),
                config.paths.lm.display()
            );
        }
        Command::Decode { jitter } => {
            for line in run_decode(&config, jitter)? {
                println!("{line}");
            }
        }
        Command::Evaluate { jitter } => {
            let report = run_evaluate(&config, jitter)?;
            eprintln!("{}", report.summary());
            eprintln!("wrote report to {}", config.paths.report.display());
        }
    }
    Ok(())
}
