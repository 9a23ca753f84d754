//! Command-line experiment runner for subjectivity detection.
//!
//! Every command reads the same experiment configuration (a JSON file,
//! optionally overridden with `--set key.path=value`) and writes below
//! `output_dir`:
//!
//! ```text
//! data/corpus.json            prepared corpus cache
//! data/data_report.json       counts, ratios, agreement, split sizes
//! {family}-{variant}/seed-N/  checkpoints, losses.csv, manifest.json, metrics.json
//! {family}-{variant}/         aggregated metrics.json, metrics.csv, table.csv
//! baseline/                   random-baseline reports
//! ```

pub mod config;
pub mod embeddings;
pub mod evaluate;
pub mod prepare;
pub mod train;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Once;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use subjlab_core::corpus::{ParaphraseClient, ProcessParaphraser, SplitPart, WordDropout, DEFAULT_DROPOUT_RATE};

pub use config::ExperimentConfig;

/// Directory for corpus caches instead of `{output_dir}/data`.
pub const CACHE_DIR_ENV: &str = "SUBJLAB_CACHE_DIR";
/// Disables paraphrase workers and model downloads when set to a non-empty
/// value other than `0`.
pub const OFFLINE_ENV: &str = "SUBJLAB_OFFLINE";

#[derive(Debug, Parser)]
#[command(name = "subjlab", version, about = "Train and evaluate subjectivity detectors on multi-annotator data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment configuration (JSON); built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.epochs=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Run a single seed instead of `split.seeds`.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Common {
    pub fn load(&self) -> Result<ExperimentConfig> {
        config::load(self.config.as_deref(), &self.set, self.seed)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic annotation table with keyword-marked subjectivity.
    Synth {
        /// Destination TSV file.
        #[arg(long)]
        output: PathBuf,
        /// Generator settings (JSON), e.g. `n_arguments`, `vocabulary`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Parse annotations, select annotators and values, cache the corpus.
    Prepare(Common),
    /// Train the configured method for every seed.
    Train(Common),
    /// Score trained runs on the test part and aggregate over seeds.
    Evaluate(Common),
    /// Export sentence embeddings with a two-component projection.
    ExportEmbeddings {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "test")]
        part: SplitPart,
        /// Value name or index; the first selected value by default.
        #[arg(long)]
        value: Option<String>,
        /// Defaults to `embeddings.tsv` in the run directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score the fair-coin baseline on the test part.
    Baseline(Common),
}

pub fn run(cli: Cli) -> Result<()> {
    apply_offline_env();
    match cli.command {
        Command::Synth {
            output,
            config,
            set,
            seed,
        } => prepare::synth(&output, config.as_deref(), &set, seed),
        Command::Prepare(c) => prepare::run(&c.load()?).map(|_| ()),
        Command::Train(c) => train::run(&c.load()?),
        Command::Evaluate(c) => evaluate::run(&c.load()?).map(|_| ()),
        Command::ExportEmbeddings {
            common,
            part,
            value,
            output,
        } => embeddings::run(&common.load()?, part, value.as_deref(), output.as_deref()).map(|_| ()),
        Command::Baseline(c) => evaluate::baseline(&c.load()?).map(|_| ()),
    }
}

pub fn offline() -> bool {
    std::env::var(OFFLINE_ENV).is_ok_and(|v| !v.is_empty() && v != "0")
}

/// Propagates offline mode to model workers started by this process.
fn apply_offline_env() {
    static ONCE: Once = Once::new();
    if offline() {
        ONCE.call_once(|| {
            for key in ["HF_HUB_OFFLINE", "TRANSFORMERS_OFFLINE", "HF_DATASETS_OFFLINE"] {
                // Runs before any worker thread or child process exists.
                unsafe { std::env::set_var(key, "1") };
            }
        });
    }
}

pub fn corpus_cache_path(cfg: &ExperimentConfig) -> PathBuf {
    match std::env::var_os(CACHE_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(format!("corpus-{}.json", &cfg.data_hash()[..16])),
        _ => cfg.output_dir.join("data").join("corpus.json"),
    }
}

pub fn method_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    Ok(cfg.output_dir.join(cfg.method()?.slug()))
}

pub fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> Result<PathBuf> {
    Ok(method_dir(cfg)?.join(format!("seed-{seed}")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Creates a delimited text file whose first line records the config hash.
pub fn create_tagged(path: &Path, config_hash: &str) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let file = std::fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "# config_hash: {config_hash}")?;
    Ok(w)
}

/// The paraphrase client for augmentation and paraphrase positives.
pub fn paraphraser(cfg: &ExperimentConfig) -> Result<Box<dyn ParaphraseClient>> {
    match &cfg.augment.paraphraser {
        Some(cmd) if !offline() => {
            let client = ProcessParaphraser::spawn(cmd, Duration::from_secs(cfg.augment.timeout_secs))
                .with_context(|| format!("starting paraphraser {cmd:?}"))?;
            Ok(Box::new(client))
        }
        Some(_) => {
            log::warn!("offline mode: using word dropout instead of the paraphrase worker");
            Ok(Box::new(WordDropout {
                rate: DEFAULT_DROPOUT_RATE,
            }))
        }
        None => Ok(Box::new(WordDropout {
            rate: DEFAULT_DROPOUT_RATE,
        })),
    }
}
