//! Experiment configuration: loading, `--set` overrides, defaults and hashing.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use subjlab_core::corpus::{DecodeParams, FormatConfig, SplitFractions, SplitOptions};
use subjlab_core::direct::{DsVariant, PositivePolicy};
use subjlab_core::infer::{IsVariant, DEFAULT_TOKEN_FORMAT};
use subjlab_core::{EncoderConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Tsv,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub input: PathBuf,
    pub format: TableFormat,
    pub has_header: Option<bool>,
    pub taxonomy_size: Option<usize>,
    /// Column names; defaults to the 20 level-2 values or `value_{i}`.
    pub value_names: Option<Vec<String>>,
    pub annotator_k: usize,
    pub value_k: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::from("data/annotations.tsv"),
            format: TableFormat::Tsv,
            has_header: None,
            taxonomy_size: None,
            value_names: None,
            annotator_k: 4,
            value_k: 8,
        }
    }
}

impl DataConfig {
    pub fn format_config(&self) -> FormatConfig {
        let base = match self.format {
            TableFormat::Tsv => FormatConfig::tsv(),
            TableFormat::Csv => FormatConfig::csv(),
        };
        FormatConfig {
            has_header: self.has_header,
            taxonomy_size: self.taxonomy_size,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train: f64,
    pub test: f64,
    pub val_of_train: f64,
    pub seeds: Vec<u64>,
    pub fixed_test: bool,
    pub test_seed: u64,
    pub stratify: Option<usize>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let f = SplitFractions::default();
        Self {
            train: f.train,
            test: f.test,
            val_of_train: f.val_of_train,
            seeds: vec![0, 1, 2, 3, 4],
            fixed_test: true,
            test_seed: 0,
            stratify: None,
        }
    }
}

impl SplitConfig {
    pub fn options(&self, seed: u64) -> SplitOptions {
        SplitOptions {
            fractions: SplitFractions {
                train: self.train,
                test: self.test,
                val_of_train: self.val_of_train,
            },
            seed,
            fixed_test: self.fixed_test,
            test_seed: self.test_seed,
            stratify: self.stratify,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[serde(alias = "IS")]
    Is,
    #[serde(alias = "DS")]
    Ds,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Is => "is",
            Family::Ds => "ds",
        })
    }
}

/// A family together with one of its variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Is(IsVariant),
    Ds(DsVariant),
}

impl Method {
    pub fn family(self) -> Family {
        match self {
            Method::Is(_) => Family::Is,
            Method::Ds(_) => Family::Ds,
        }
    }

    pub fn variant(self) -> &'static str {
        match self {
            Method::Is(v) => v.as_str(),
            Method::Ds(v) => v.as_str(),
        }
    }

    pub fn default_train_config(self) -> TrainConfig {
        match self {
            Method::Is(_) => IsVariant::default_train_config(),
            Method::Ds(v) => v.default_train_config(),
        }
    }

    /// Directory name of this method's runs, e.g. `ds-sup`.
    pub fn slug(self) -> String {
        format!("{}-{}", self.family(), self.variant())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MethodConfig {
    pub family: Family,
    pub variant: String,
    /// Value names to train and report; all corpus values when unset.
    pub values: Option<Vec<String>>,
    pub positive_policy: PositivePolicy,
    pub threshold: f64,
    pub token_format: String,
    /// Tune per-annotator thresholds on the validation part (IS only).
    pub tune_thresholds: bool,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            family: Family::Ds,
            variant: "sup".into(),
            values: None,
            positive_policy: PositivePolicy::default(),
            threshold: 0.5,
            token_format: DEFAULT_TOKEN_FORMAT.into(),
            tune_thresholds: true,
        }
    }
}

impl MethodConfig {
    pub fn method(&self) -> Result<Method> {
        Ok(match self.family {
            Family::Is => Method::Is(IsVariant::from_str(&self.variant).map_err(anyhow::Error::msg)?),
            Family::Ds => Method::Ds(DsVariant::from_str(&self.variant).map_err(anyhow::Error::msg)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Paraphrase worker command; word dropout is used when unset.
    pub paraphraser: Option<Vec<String>>,
    pub timeout_secs: u64,
    pub decode: DecodeParams,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            paraphraser: None,
            timeout_secs: 600,
            decode: DecodeParams::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub split: SplitConfig,
    pub method: MethodConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            data: DataConfig::default(),
            split: SplitConfig::default(),
            method: MethodConfig::default(),
            encoder: EncoderConfig::default(),
            train: DsVariant::Sup.default_train_config(),
            augment: AugmentConfig::default(),
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn method(&self) -> Result<Method> {
        self.method.method()
    }

    fn validate(&self) -> Result<()> {
        self.method()?;
        if self.split.seeds.is_empty() {
            bail!("split.seeds must not be empty");
        }
        self.encoder.validate()?;
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.method.threshold) {
            bail!("method.threshold must lie in [0, 1), got {}", self.method.threshold);
        }
        Ok(())
    }

    /// SHA-256 of the resolved configuration without `output_dir` and
    /// `split.seeds`; every seed's artifacts live in their own directory.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serialises");
        if let Value::Object(map) = &mut v {
            map.remove("output_dir");
            if let Some(Value::Object(split)) = map.get_mut("split") {
                split.remove("seeds");
            }
        }
        sha256_json(&v)
    }

    /// Hash of the settings that determine the prepared corpus.
    pub fn data_hash(&self) -> String {
        sha256_json(&serde_json::to_value(&self.data).expect("config serialises"))
    }
}

pub fn sha256_json(v: &Value) -> String {
    let bytes = serde_json::to_vec(v).expect("json serialises");
    hex::encode(Sha256::digest(&bytes))
}

/// Parses a `--set` value as JSON, falling back to a plain string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `key.path=value` to a JSON document, creating objects on the way.
pub fn apply_set(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .with_context(|| format!("--set expects key=value, got {assignment:?}"))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("invalid key path {path:?}");
    }
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        node = match node {
            Value::Array(items) => {
                let i: usize = key.parse().with_context(|| format!("{path}: {key:?} is not an index"))?;
                let len = items.len();
                items
                    .get_mut(i)
                    .with_context(|| format!("{path}: index {i} out of range for length {len}"))?
            }
            other => {
                if !other.is_object() {
                    *other = Value::Object(Map::new());
                }
                other
                    .as_object_mut()
                    .expect("object")
                    .entry(key.to_string())
                    .or_insert_with(|| Value::Object(Map::new()))
            }
        };
    }
    let last = keys[keys.len() - 1];
    let value = parse_value(raw);
    match node {
        Value::Array(items) => {
            let i: usize = last.parse().with_context(|| format!("{path}: {last:?} is not an index"))?;
            let len = items.len();
            *items
                .get_mut(i)
                .with_context(|| format!("{path}: index {i} out of range for length {len}"))? = value;
        }
        other => {
            if !other.is_object() {
                *other = Value::Object(Map::new());
            }
            other.as_object_mut().expect("object").insert(last.to_string(), value);
        }
    }
    Ok(())
}

/// Recursively overlays `top` on `base`.
fn merge(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Built-in defaults with the `train` section left to the method.
fn default_document() -> Value {
    let mut v = serde_json::to_value(ExperimentConfig::default()).expect("config serialises");
    v["train"] = Value::Object(Map::new());
    v
}

/// Reads a config document, applies overrides, fills the training
/// defaults of the selected method and validates the result.
pub fn load(path: Option<&Path>, sets: &[String], seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut doc = default_document();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        let file: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
        merge(&mut doc, file);
    }
    for s in sets {
        apply_set(&mut doc, s)?;
    }
    if let Some(seed) = seed {
        doc["split"]["seeds"] = Value::from(vec![seed]);
    }
    resolve(doc)
}

fn resolve(mut doc: Value) -> Result<ExperimentConfig> {
    let method: MethodConfig =
        serde_json::from_value(doc.get("method").cloned().unwrap_or(Value::Null)).context("method section")?;
    let mut train = serde_json::to_value(method.method()?.default_train_config())?;
    merge(&mut train, doc.get("train").cloned().unwrap_or(Value::Null));
    doc["train"] = train;
    let cfg: ExperimentConfig = serde_json::from_value(doc).context("invalid configuration")?;
    cfg.validate()?;
    Ok(cfg)
}
