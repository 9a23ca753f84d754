//! Per-value binary subjectivity classifiers (DS-simple, DS-sup, DS-unsup).

mod losses;
mod triplets;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

pub use crate::encoder::LossBreakdown;
pub use losses::{
    bce_loss, bce_with_grad, combined_loss, normalize, normalize_backward, sigmoid, tension_loss,
    tension_loss_indexed, tension_with_grad, triplet_loss, triplet_with_grad, Normalized,
};
pub use triplets::{sample_triplets, TripletBatch};

use crate::corpus::{
    augment_minority, word_dropout, Corpus, CorpusError, DecodeParams, ParaphraseClient, ParaphraseRequest,
    Provenance, SplitPart, SplitSpec, WordDropout, DEFAULT_DROPOUT_RATE,
};
use crate::encoder::{
    run_epochs, Batch, EncoderConfig, EncoderError, EpochLoss, HeadKind, LossFn, ModelState, StepInputs,
    StepOutputs, TrainConfig,
};
use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum DirectError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("no training examples for value {0}")]
    EmptyTraining(usize),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DsVariant {
    Simple,
    Sup,
    Unsup,
}

impl DsVariant {
    pub const ALL: [DsVariant; 3] = [Self::Simple, Self::Sup, Self::Unsup];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Simple => "simple",
            Self::Sup => "sup",
            Self::Unsup => "unsup",
        }
    }

    /// Hyperparameters from the reference setup for this variant.
    pub fn default_train_config(self) -> TrainConfig {
        let base = TrainConfig {
            batch_size: 16,
            learning_rate: 1e-5,
            epochs: 5,
            ..TrainConfig::default()
        };
        match self {
            Self::Simple => base,
            Self::Sup => TrainConfig {
                lambda_cl: 1.0,
                margin: 1.0,
                ..base
            },
            Self::Unsup => TrainConfig {
                batch_size: 64,
                lambda_cl: 5.0,
                temperature: 0.1,
                ..base
            },
        }
    }
}

impl fmt::Display for DsVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DsVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple" => Ok(Self::Simple),
            "sup" => Ok(Self::Sup),
            "unsup" => Ok(Self::Unsup),
            other => Err(format!("unknown DS variant {other:?} (expected simple, sup or unsup)")),
        }
    }
}

/// How DS-unsup obtains the positive of each anchor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivePolicy {
    /// A second forward pass of the same text with fresh dropout noise.
    #[default]
    Dropout,
    /// A paraphrase of the text from the configured paraphraser.
    Paraphrase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryExample {
    pub id: String,
    pub text: String,
    pub label: u8,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BinaryDataset {
    pub examples: Vec<BinaryExample>,
    pub warnings: Vec<String>,
}

impl BinaryDataset {
    pub fn counts(&self) -> (usize, usize) {
        let pos = self.examples.iter().filter(|e| e.label == 1).count();
        (pos, self.examples.len() - pos)
    }
}

/// Which arguments a dataset is drawn from.
#[derive(Debug, Clone, Copy)]
pub enum Subset<'a> {
    All,
    Part(&'a SplitSpec, SplitPart),
}

pub struct Augmentation<'a> {
    pub paraphraser: &'a dyn ParaphraseClient,
    pub decode: DecodeParams,
    pub seed: u64,
}

/// `(text, subjective bit)` pairs for one value. Augmentation only applies
/// to the train part.
pub fn make_binary_dataset(
    corpus: &Corpus,
    subset: Subset<'_>,
    value: usize,
    augment: Option<&Augmentation<'_>>,
) -> Result<BinaryDataset, CorpusError> {
    corpus.check_value(value)?;
    let rows: Vec<usize> = match subset {
        Subset::All => (0..corpus.len()).collect(),
        Subset::Part(split, part) => {
            let index = corpus.id_index();
            split
                .ids(part)
                .iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| CorpusError::InvalidSplit(format!("unknown argument id {id}")))
                })
                .collect::<Result<_, _>>()?
        }
    };
    let originals: Vec<BinaryExample> = rows
        .iter()
        .map(|&i| BinaryExample {
            id: corpus.argument_ids()[i].clone(),
            text: corpus.texts()[i].clone(),
            label: corpus.subjectivity()[[i, value]],
            provenance: Provenance::Original,
        })
        .collect();

    let is_train = matches!(subset, Subset::Part(_, SplitPart::Train));
    let Some(aug) = augment.filter(|_| is_train) else {
        return Ok(BinaryDataset {
            examples: originals,
            warnings: Vec::new(),
        });
    };
    let pairs: Vec<(String, u8)> = originals.iter().map(|e| (e.text.clone(), e.label)).collect();
    let outcome = augment_minority(&pairs, value, aug.paraphraser, &aug.decode, aug.seed)?;
    let mut examples = originals;
    for (n, item) in outcome.items.into_iter().skip(pairs.len()).enumerate() {
        let Provenance::Paraphrase { source, .. } = item.provenance else {
            continue;
        };
        examples.push(BinaryExample {
            id: format!("{}#aug{n}", examples[source].id),
            text: item.text,
            label: item.label,
            provenance: item.provenance,
        });
    }
    Ok(BinaryDataset {
        examples,
        warnings: outcome.warnings,
    })
}

/// BCE on the binary head plus the variant's contrastive term.
pub struct DsLoss {
    pub variant: DsVariant,
    pub lambda: f64,
    pub margin: f64,
    pub temperature: f64,
    pub seed: u64,
    /// Steps whose contrastive term was zero for lack of pairs.
    pub skipped_cl_steps: usize,
}

impl DsLoss {
    pub fn new(variant: DsVariant, train: &TrainConfig) -> Self {
        let lambda = match variant {
            DsVariant::Simple => 0.0,
            _ => train.lambda_cl,
        };
        Self {
            variant,
            lambda,
            margin: train.margin,
            temperature: train.temperature,
            seed: train.seed,
            skipped_cl_steps: 0,
        }
    }
}

impl LossFn for DsLoss {
    fn views(&self) -> usize {
        match self.variant {
            DsVariant::Unsup => 2,
            _ => 1,
        }
    }

    fn compute(&mut self, inputs: &StepInputs<'_>) -> StepOutputs {
        let (bce, grad_logits) = bce_with_grad(inputs.logits[0].view(), inputs.batch.targets[0].view());
        let mut grad_views = Vec::new();
        let cl = match self.variant {
            DsVariant::Simple => 0.0,
            DsVariant::Sup => {
                let labels: Vec<u8> = inputs.batch.targets[0].iter().map(|&y| u8::from(y > 0.5)).collect();
                let triplets = sample_triplets(&labels, seed::derive(self.seed, "triplet-step", inputs.step));
                if triplets.is_empty() {
                    self.skipped_cl_steps += 1;
                    0.0
                } else {
                    let n = normalize(inputs.views[0].view());
                    let (cl, gz) = triplet_with_grad(n.z.view(), &triplets, self.margin);
                    if self.lambda != 0.0 {
                        grad_views.push(Some(normalize_backward(&n, gz.view()) * self.lambda));
                    }
                    cl
                }
            }
            DsVariant::Unsup => {
                if inputs.views[0].nrows() < 2 {
                    self.skipped_cl_steps += 1;
                    0.0
                } else {
                    let (cl, ga, gp) =
                        tension_with_grad(inputs.views[0].view(), inputs.views[1].view(), self.temperature)
                            .expect("temperature validated by TrainConfig");
                    if self.lambda != 0.0 {
                        grad_views.push(Some(ga * self.lambda));
                        grad_views.push(Some(gp * self.lambda));
                    }
                    cl
                }
            }
        };
        StepOutputs {
            loss: combined_loss(bce, cl, self.lambda),
            grad_logits: vec![grad_logits],
            grad_views,
        }
    }
}

/// Paraphrases used as positives, and the fallback for failed requests.
pub struct DsOptions<'a> {
    pub positive_policy: PositivePolicy,
    pub augment: Option<Augmentation<'a>>,
    pub paraphraser: &'a dyn ParaphraseClient,
    pub decode: DecodeParams,
    pub threshold: f64,
}

static FALLBACK: WordDropout = WordDropout {
    rate: DEFAULT_DROPOUT_RATE,
};

impl Default for DsOptions<'_> {
    fn default() -> Self {
        Self {
            positive_policy: PositivePolicy::Dropout,
            augment: None,
            paraphraser: &FALLBACK,
            decode: DecodeParams::default(),
            threshold: 0.5,
        }
    }
}

/// A trained per-value subjectivity classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsModel {
    pub variant: DsVariant,
    pub value_index: usize,
    pub value_name: String,
    pub positive_policy: PositivePolicy,
    pub threshold: f64,
    pub train: TrainConfig,
    pub state: ModelState,
    pub history: Vec<EpochLoss>,
    pub skipped_cl_steps: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DsPrediction {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

/// Trains one classifier for `value` on the train part of `split`.
pub fn train_ds(
    corpus: &Corpus,
    split: &SplitSpec,
    value: usize,
    variant: DsVariant,
    encoder: &EncoderConfig,
    train: &TrainConfig,
    options: &DsOptions<'_>,
) -> Result<DsModel, DirectError> {
    train.validate()?;
    let data = make_binary_dataset(corpus, Subset::Part(split, SplitPart::Train), value, options.augment.as_ref())?;
    if data.examples.is_empty() {
        return Err(DirectError::EmptyTraining(value));
    }
    let mut warnings = data.warnings.clone();
    let (pos, neg) = data.counts();
    if (pos == 0 || neg == 0) && variant == DsVariant::Sup {
        let msg = format!("value {value}: single-class training data, contrastive term will be zero");
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let mut state = ModelState::new(encoder, &[HeadKind::Binary], seed::derive(train.seed, "ds-head", value as u64))?;
    let mut loss = DsLoss::new(variant, train);
    let use_paraphrase = variant == DsVariant::Unsup && options.positive_policy == PositivePolicy::Paraphrase;
    let mut positive_warnings = Vec::new();
    let examples = &data.examples;
    let mut make_batch = |idx: &[usize], epoch: usize| {
        let texts: Vec<String> = idx.iter().map(|&i| examples[i].text.clone()).collect();
        let alt_texts = use_paraphrase.then(|| {
            idx.iter()
                .map(|&i| {
                    let request = ParaphraseRequest {
                        text: examples[i].text.clone(),
                        n_candidates: 1,
                        seed: seed::derive(train.seed, &format!("positive-{value}-{epoch}"), i as u64),
                        decode: options.decode.clone(),
                    };
                    match options.paraphraser.paraphrase(&request) {
                        Ok(r) if !r.paraphrases.is_empty() => r.paraphrases[0].clone(),
                        other => {
                            if let Err(e) = other {
                                positive_warnings.push(format!("positive for {}: {e}", examples[i].id));
                            }
                            word_dropout(&request.text, request.seed, DEFAULT_DROPOUT_RATE)
                        }
                    }
                })
                .collect()
        });
        Batch {
            ids: idx.iter().map(|&i| examples[i].id.clone()).collect(),
            texts,
            alt_texts,
            targets: vec![Array2::from_shape_fn((idx.len(), 1), |(r, _)| f64::from(examples[idx[r]].label))],
        }
    };
    let history = run_epochs(&mut state, examples.len(), train, &mut loss, &mut make_batch)?;
    warnings.extend(positive_warnings);
    if loss.skipped_cl_steps > 0 && variant != DsVariant::Simple {
        warnings.push(format!(
            "value {value}: contrastive term skipped on {} steps",
            loss.skipped_cl_steps
        ));
    }
    Ok(DsModel {
        variant,
        value_index: value,
        value_name: corpus.value_selection().names()[value].clone(),
        positive_policy: options.positive_policy,
        threshold: options.threshold,
        train: train.clone(),
        state,
        history,
        skipped_cl_steps: loss.skipped_cl_steps,
        warnings,
    })
}

/// `score = sigmoid(logit)`, `label = score > threshold`.
pub fn predict_ds(model: &DsModel, texts: &[String], threshold: f64) -> Result<DsPrediction, DirectError> {
    let logits = model.state.logits(texts, 0)?;
    let scores: Vec<f64> = logits.index_axis(Axis(1), 0).iter().map(|&z| sigmoid(z)).collect();
    let labels = scores.iter().map(|&s| u8::from(s > threshold)).collect();
    Ok(DsPrediction { scores, labels })
}

impl DsModel {
    pub fn embed(&self, texts: &[String]) -> Result<Array2<f64>, DirectError> {
        Ok(self.state.embed(texts)?)
    }
}
