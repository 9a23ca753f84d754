use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use subjlab_core::corpus::{
    agreement_band, build_corpus, fleiss_kappa, load_corpus, make_splits, read_annotations, save_corpus,
    select_annotators, select_values, AgreementBand,
};
use subjlab_core::synthetic::{generate, write_tsv, SyntheticConfig};
use subjlab_core::Corpus;

use crate::config::{apply_set, ExperimentConfig};
use crate::{corpus_cache_path, write_json};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueReport {
    pub name: String,
    /// Column in the input label vectors.
    pub column: usize,
    pub subjective: usize,
    pub non_subjective: usize,
    pub total: usize,
    /// Subjective over non-subjective count.
    pub ratio: Option<f64>,
    pub fleiss_kappa: Option<f64>,
    pub agreement: Option<AgreementBand>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataReport {
    pub config_hash: String,
    pub data_hash: String,
    pub input: String,
    pub records: usize,
    pub arguments: usize,
    pub annotators: Vec<String>,
    pub values: Vec<ValueReport>,
    pub splits: Vec<SplitSizes>,
}

pub fn synth(output: &Path, config: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<()> {
    let mut doc = serde_json::to_value(SyntheticConfig::default())?;
    if let Some(p) = config {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        doc = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
    }
    for s in sets {
        apply_set(&mut doc, s)?;
    }
    if let Some(seed) = seed {
        doc["seed"] = Value::from(seed);
    }
    let cfg: SyntheticConfig = serde_json::from_value(doc).context("invalid generator settings")?;
    let records = generate(&cfg);
    if let Some(parent) = output.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let file = std::fs::File::create(output).with_context(|| format!("writing {}", output.display()))?;
    write_tsv(&records, std::io::BufWriter::new(file))?;
    log::info!("wrote {} records to {}", records.len(), output.display());
    Ok(())
}

/// Builds the corpus cache and the data report.
pub fn run(cfg: &ExperimentConfig) -> Result<DataReport> {
    let input = &cfg.data.input;
    let records =
        read_annotations(input, &cfg.data.format_config()).with_context(|| format!("reading {}", input.display()))?;
    let annotators = select_annotators(&records, cfg.data.annotator_k).with_context(|| input.display().to_string())?;
    let values = select_values(&records, &annotators, cfg.data.value_k, cfg.data.value_names.as_deref())
        .with_context(|| input.display().to_string())?;
    let corpus = build_corpus(&records, &annotators, &values).with_context(|| input.display().to_string())?;

    let cache = corpus_cache_path(cfg);
    let source = json!({
        "data_hash": cfg.data_hash(),
        "input": input.display().to_string(),
        "records": records.len(),
    });
    save_corpus(&cache, &corpus, source).with_context(|| format!("writing {}", cache.display()))?;

    let mut value_reports = Vec::with_capacity(corpus.k());
    for (v, name) in values.names().iter().enumerate() {
        let (s, ns) = corpus.value_counts(v)?;
        let kappa = fleiss_kappa(&corpus, v)?;
        value_reports.push(ValueReport {
            name: name.clone(),
            column: values.indices()[v],
            subjective: s,
            non_subjective: ns,
            total: s + ns,
            ratio: (ns > 0).then(|| s as f64 / ns as f64),
            fleiss_kappa: kappa,
            agreement: kappa.map(agreement_band),
        });
    }
    let mut splits = Vec::with_capacity(cfg.split.seeds.len());
    for &seed in &cfg.split.seeds {
        let spec = make_splits(&corpus, &cfg.split.options(seed))?;
        splits.push(SplitSizes {
            seed,
            train: spec.train_ids.len(),
            val: spec.val_ids.len(),
            test: spec.test_ids.len(),
        });
    }
    let report = DataReport {
        config_hash: cfg.hash(),
        data_hash: cfg.data_hash(),
        input: input.display().to_string(),
        records: records.len(),
        arguments: corpus.len(),
        annotators,
        values: value_reports,
        splits,
    };
    write_json(&cfg.output_dir.join("data").join("data_report.json"), &report)?;
    log::info!("prepared {} arguments into {}", corpus.len(), cache.display());
    Ok(report)
}

/// Loads the corpus cache written by `prepare` for this data section.
pub fn load_prepared(cfg: &ExperimentConfig) -> Result<Corpus> {
    let path = corpus_cache_path(cfg);
    if !path.exists() {
        bail!("no corpus cache at {}; run `subjlab prepare` first", path.display());
    }
    let (corpus, source) = load_corpus(&path).with_context(|| format!("reading {}", path.display()))?;
    let found = source.get("data_hash").and_then(Value::as_str).unwrap_or_default();
    if found != cfg.data_hash() {
        bail!(
            "corpus cache {} was prepared from different data settings; rerun `subjlab prepare`",
            path.display()
        );
    }
    Ok(corpus)
}
