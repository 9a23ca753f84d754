use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use subjlab_core::corpus::{make_splits, ParaphraseClient, SplitSpec};
use subjlab_core::direct::{train_ds, Augmentation, DsOptions, DsVariant};
use subjlab_core::encoder::{load_checkpoint, save_checkpoint, EpochLoss, ModelState};
use subjlab_core::infer::{train_is, tune_thresholds, IsOptions};
use subjlab_core::{seed, Corpus, DsModel, IsModelBundle, TrainConfig};

use crate::config::{ExperimentConfig, Method};
use crate::prepare::load_prepared;
use crate::{create_tagged, paraphraser, seed_dir, write_json};

pub const DS_KIND: &str = "ds-model";
pub const IS_BUNDLE_KIND: &str = "is-bundle";
pub const IS_STATE_KIND: &str = "is-state";

/// Everything needed to reproduce and interpret one trained seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub family: String,
    pub variant: String,
    pub seed: u64,
    /// Seed handed to the trainer, derived from `train.seed` and `seed`.
    pub train_seed: u64,
    pub split_sizes: [usize; 3],
    pub values: Vec<String>,
    /// Settings the method description leaves open, as resolved here.
    pub decisions: Map<String, Value>,
    /// Per-annotator, per-value decision thresholds (IS only).
    pub thresholds: Option<Array2<f64>>,
    pub checkpoints: Vec<String>,
    pub warnings: Vec<String>,
    pub config: Value,
}

/// A trained seed loaded back from its checkpoints.
pub enum Trained {
    Ds(Vec<DsModel>),
    Is(Box<IsModelBundle>),
}

/// Indices of `method.values` in the corpus, or all values.
pub fn selected_values(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Vec<usize>> {
    let names = corpus.value_selection().names();
    match &cfg.method.values {
        None => Ok((0..names.len()).collect()),
        Some(wanted) => wanted
            .iter()
            .map(|w| {
                names
                    .iter()
                    .position(|n| n == w)
                    .with_context(|| format!("method.values: {w:?} is not a prepared value (have {names:?})"))
            })
            .collect(),
    }
}

/// The resolved configuration as stored next to results.
pub fn config_document(cfg: &ExperimentConfig) -> Value {
    let mut v = serde_json::to_value(cfg).expect("config serialises");
    if let Value::Object(map) = &mut v {
        map.remove("output_dir");
    }
    v
}

pub fn split_for(cfg: &ExperimentConfig, corpus: &Corpus, seed: u64) -> Result<SplitSpec> {
    Ok(make_splits(corpus, &cfg.split.options(seed))?)
}

fn train_config(cfg: &ExperimentConfig, run_seed: u64) -> TrainConfig {
    TrainConfig {
        seed: seed::derive(cfg.train.seed, "run", run_seed),
        ..cfg.train.clone()
    }
}

fn decisions(cfg: &ExperimentConfig, method: Method, client: &str) -> Map<String, Value> {
    let t = &cfg.train;
    let mut d = Map::new();
    d.insert("optimizer".into(), json!(t.optimizer));
    d.insert("dropout".into(), json!(cfg.encoder.dropout));
    d.insert("encoder_backend".into(), json!(cfg.encoder.backend_id));
    match method {
        Method::Ds(v) => {
            d.insert("threshold".into(), json!(cfg.method.threshold));
            d.insert("augmentation".into(), json!(cfg.augment.enabled));
            d.insert("augmentation_scope".into(), json!("train part only"));
            d.insert("paraphraser".into(), json!(client));
            if v != DsVariant::Simple {
                d.insert("lambda".into(), json!(t.lambda_cl));
            }
            if v == DsVariant::Sup {
                d.insert("margin".into(), json!(t.margin));
                d.insert("triplet_distance".into(), json!("euclidean on unit vectors"));
                d.insert("triplet_sampling".into(), json!("per batch"));
            }
            if v == DsVariant::Unsup {
                d.insert("temperature".into(), json!(t.temperature));
                d.insert("positive_policy".into(), json!(cfg.method.positive_policy));
                d.insert("tension_denominator".into(), json!("all anchors in the batch, including self"));
            }
        }
        Method::Is(_) => {
            d.insert("threshold_tuning".into(), json!(cfg.method.tune_thresholds));
            d.insert("threshold_grid".into(), json!(0.05));
            d.insert("token_format".into(), json!(cfg.method.token_format));
        }
    }
    d
}

fn write_losses(path: &Path, hash: &str, curves: &[(String, Vec<EpochLoss>)]) -> Result<()> {
    let mut w = create_tagged(path, hash)?;
    writeln!(w, "model,epoch,bce,cl,total,batches")?;
    for (name, hist) in curves {
        for e in hist {
            writeln!(w, "{name},{},{},{},{},{}", e.epoch, e.bce, e.cl, e.total, e.batches)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn run(cfg: &ExperimentConfig) -> Result<()> {
    let corpus = load_prepared(cfg)?;
    let method = cfg.method()?;
    let values = selected_values(cfg, &corpus)?;
    let client = paraphraser(cfg)?;
    for &s in &cfg.split.seeds {
        train_seed(cfg, &corpus, method, &values, client.as_ref(), s).with_context(|| format!("seed {s}"))?;
    }
    Ok(())
}

fn train_seed(
    cfg: &ExperimentConfig,
    corpus: &Corpus,
    method: Method,
    values: &[usize],
    client: &dyn ParaphraseClient,
    run_seed: u64,
) -> Result<()> {
    let hash = cfg.hash();
    let doc = config_document(cfg);
    let dir = seed_dir(cfg, run_seed)?;
    std::fs::create_dir_all(&dir)?;
    let split = split_for(cfg, corpus, run_seed)?;
    let train = train_config(cfg, run_seed);
    let names = corpus.value_selection().names();

    let mut curves = Vec::new();
    let mut checkpoints = Vec::new();
    let mut warnings = Vec::new();
    let mut thresholds = None;
    match method {
        Method::Ds(variant) => {
            let augmentation = cfg.augment.enabled.then(|| Augmentation {
                paraphraser: client,
                decode: cfg.augment.decode.clone(),
                seed: seed::derive(cfg.augment.seed, "augment", run_seed),
            });
            let options = DsOptions {
                positive_policy: cfg.method.positive_policy,
                augment: augmentation,
                paraphraser: client,
                decode: cfg.augment.decode.clone(),
                threshold: cfg.method.threshold,
            };
            for &v in values {
                let model = train_ds(corpus, &split, v, variant, &cfg.encoder, &train, &options)
                    .with_context(|| format!("value {}", names[v]))?;
                let file = format!("ds-value-{v}.json");
                save_checkpoint(dir.join(&file), DS_KIND, &hash, doc.clone(), &model)?;
                log::info!("seed {run_seed}: trained {} ({})", names[v], variant);
                curves.push((names[v].clone(), model.history.clone()));
                warnings.extend(model.warnings.iter().cloned());
                checkpoints.push(file);
            }
        }
        Method::Is(variant) => {
            let options = IsOptions {
                token_format: cfg.method.token_format.clone(),
                audit: None,
            };
            let mut bundle = train_is(corpus, &split, variant, &cfg.encoder, &train, &options)?;
            if cfg.method.tune_thresholds {
                if split.val_ids.is_empty() {
                    warnings.push("empty validation part, thresholds stay at 0.5".into());
                }
                tune_thresholds(&mut bundle, corpus, &split)?;
            }
            let states = std::mem::take(&mut bundle.states);
            for (i, state) in states.iter().enumerate() {
                let file = format!("is-state-{i}.json");
                save_checkpoint(dir.join(&file), IS_STATE_KIND, &hash, doc.clone(), state)?;
                checkpoints.push(file);
            }
            save_checkpoint(dir.join("is-bundle.json"), IS_BUNDLE_KIND, &hash, doc.clone(), &bundle)?;
            checkpoints.push("is-bundle.json".into());
            for (i, hist) in bundle.history.iter().enumerate() {
                let name = match variant {
                    subjlab_core::IsVariant::Each => bundle.annotator_ids[i].clone(),
                    _ => format!("is-{}", variant.as_str()),
                };
                curves.push((name, hist.clone()));
            }
            thresholds = Some(bundle.thresholds.clone());
        }
    }
    write_losses(&dir.join("losses.csv"), &hash, &curves)?;
    let manifest = RunManifest {
        config_hash: hash,
        family: method.family().to_string(),
        variant: method.variant().into(),
        seed: run_seed,
        train_seed: train.seed,
        split_sizes: [split.train_ids.len(), split.val_ids.len(), split.test_ids.len()],
        values: values.iter().map(|&v| names[v].clone()).collect(),
        decisions: decisions(cfg, method, client.name()),
        thresholds,
        checkpoints,
        warnings,
        config: doc,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

fn check_hash(path: &Path, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        bail!(
            "{} was produced with config {found}, but the current config hashes to {expected}; \
             refusing to mix results from different configurations",
            path.display()
        );
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}; run `subjlab train` first", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Loads the checkpoints of one seed, refusing any written under another
/// configuration.
pub fn load_seed(cfg: &ExperimentConfig, run_seed: u64) -> Result<(RunManifest, Trained)> {
    let dir = seed_dir(cfg, run_seed)?;
    let expected = cfg.hash();
    let manifest = read_manifest(&dir)?;
    check_hash(&dir.join("manifest.json"), &manifest.config_hash, &expected)?;
    let path = |f: &str| -> PathBuf { dir.join(f) };
    let trained = match cfg.method()? {
        Method::Ds(_) => {
            let mut models = Vec::new();
            for f in manifest.checkpoints.iter() {
                let (h, m): (_, DsModel) = load_checkpoint(path(f), DS_KIND)?;
                check_hash(&path(f), &h.config_hash, &expected)?;
                models.push(m);
            }
            Trained::Ds(models)
        }
        Method::Is(_) => {
            let (h, mut bundle): (_, IsModelBundle) = load_checkpoint(path("is-bundle.json"), IS_BUNDLE_KIND)?;
            check_hash(&path("is-bundle.json"), &h.config_hash, &expected)?;
            for f in manifest.checkpoints.iter().filter(|f| f.starts_with("is-state-")) {
                let (h, state): (_, ModelState) = load_checkpoint(path(f), IS_STATE_KIND)?;
                check_hash(&path(f), &h.config_hash, &expected)?;
                bundle.states.push(state);
            }
            Trained::Is(Box::new(bundle))
        }
    };
    Ok((manifest, trained))
}
