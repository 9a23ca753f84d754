//! Inferred subjectivity: predict every annotator's value labels, then flag
//! the (argument, value) cells where the predictions disagree.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{lane_subjectivity, Corpus, CorpusError, SplitPart, SplitSpec};
use crate::direct::{bce_with_grad, sigmoid};
use crate::encoder::{
    run_epochs, Batch, EncoderConfig, EncoderError, EpochLoss, HeadKind, LossBreakdown, LossFn, ModelState,
    StepInputs, StepOutputs, TrainConfig,
};
use crate::seed;

pub const DEFAULT_TOKEN_FORMAT: &str = "[{annotator_id}] {text}";

#[derive(Debug, thiserror::Error)]
pub enum InferError {
    #[error("annotator {0} has no training rows")]
    NoTrainingRows(String),
    #[error("token format must contain {{text}}: {0:?}")]
    TokenFormat(String),
    #[error("need at least two annotators, found {0}")]
    TooFewAnnotators(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsVariant {
    Each,
    Shared,
    Single,
}

impl IsVariant {
    pub const ALL: [IsVariant; 3] = [Self::Each, Self::Shared, Self::Single];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Each => "each",
            Self::Shared => "shared",
            Self::Single => "single",
        }
    }

    pub fn default_train_config() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            learning_rate: 1e-5,
            epochs: 10,
            ..TrainConfig::default()
        }
    }
}

impl fmt::Display for IsVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IsVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "each" => Ok(Self::Each),
            "shared" => Ok(Self::Shared),
            "single" => Ok(Self::Single),
            other => Err(format!("unknown IS variant {other:?} (expected each, shared or single)")),
        }
    }
}

/// `template` with `{annotator_id}` and `{text}` substituted.
pub fn format_annotator_input(template: &str, annotator_id: &str, text: &str) -> String {
    template.replace("{annotator_id}", annotator_id).replace("{text}", text)
}

/// Trained IS models.
///
/// `each` holds one state per annotator with one head; `shared` one state
/// with a head per annotator; `single` one state with one head, fed
/// annotator-tagged inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsModelBundle {
    pub variant: IsVariant,
    pub annotator_ids: Vec<String>,
    pub value_names: Vec<String>,
    pub token_format: Option<String>,
    pub states: Vec<ModelState>,
    /// Decision threshold per annotator and value, `[m, k]`.
    pub thresholds: Array2<f64>,
    pub train: TrainConfig,
    /// Loss curves, one per trained state.
    pub history: Vec<Vec<EpochLoss>>,
}

impl IsModelBundle {
    pub fn k(&self) -> usize {
        self.value_names.len()
    }

    pub fn m(&self) -> usize {
        self.annotator_ids.len()
    }

    /// Raw sigmoid scores `[n, m, k]`.
    pub fn scores(&self, texts: &[String]) -> Result<Array3<f64>, InferError> {
        let (n, m, k) = (texts.len(), self.m(), self.k());
        let mut out = Array3::zeros((n, m, k));
        for j in 0..m {
            let logits = match self.variant {
                IsVariant::Each => self.states[j].logits(texts, 0)?,
                IsVariant::Shared => self.states[0].logits(texts, j)?,
                IsVariant::Single => {
                    let template = self.token_format.as_deref().unwrap_or(DEFAULT_TOKEN_FORMAT);
                    let tagged: Vec<String> = texts
                        .iter()
                        .map(|t| format_annotator_input(template, &self.annotator_ids[j], t))
                        .collect();
                    self.states[0].logits(&tagged, 0)?
                }
            };
            out.slice_mut(s![.., j, ..]).assign(&logits.mapv(sigmoid));
        }
        Ok(out)
    }
}

/// Reports which annotator's labels a trainer reads: `(trainer, annotator)`.
pub type AuditHook<'a> = &'a (dyn Fn(usize, usize) + Sync);

pub struct IsOptions<'a> {
    pub token_format: String,
    pub audit: Option<AuditHook<'a>>,
}

impl Default for IsOptions<'_> {
    fn default() -> Self {
        Self {
            token_format: DEFAULT_TOKEN_FORMAT.into(),
            audit: None,
        }
    }
}

/// Sum over heads of the mean BCE over `batch × k` entries.
struct MultiLabelBce;

impl LossFn for MultiLabelBce {
    fn compute(&mut self, inputs: &StepInputs<'_>) -> StepOutputs {
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(inputs.logits.len());
        for (logits, targets) in inputs.logits.iter().zip(&inputs.batch.targets) {
            let (l, g) = bce_with_grad(logits.view(), targets.view());
            total += l;
            grads.push(g);
        }
        StepOutputs {
            loss: LossBreakdown::new(total, 0.0, 0.0),
            grad_logits: grads,
            grad_views: vec![],
        }
    }
}

/// Labels of annotator `j` on the given rows, as training targets.
fn annotator_targets(
    corpus: &Corpus,
    rows: &[usize],
    annotator: usize,
    trainer: usize,
    audit: Option<AuditHook<'_>>,
) -> Array2<f64> {
    if let Some(hook) = audit {
        hook(trainer, annotator);
    }
    let ann = corpus.annotations();
    Array2::from_shape_fn((rows.len(), corpus.k()), |(r, v)| f64::from(ann[[rows[r], annotator, v]]))
}

fn rows_of(corpus: &Corpus, split: &SplitSpec, part: SplitPart) -> Result<Vec<usize>, CorpusError> {
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
        .collect()
}

fn select(texts: &[String], idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&i| texts[i].clone()).collect()
}

pub fn train_is(
    corpus: &Corpus,
    split: &SplitSpec,
    variant: IsVariant,
    encoder: &EncoderConfig,
    train: &TrainConfig,
    options: &IsOptions<'_>,
) -> Result<IsModelBundle, InferError> {
    train.validate()?;
    let m = corpus.annotator_ids().len();
    let k = corpus.k();
    let rows = rows_of(corpus, split, SplitPart::Train)?;
    if rows.is_empty() {
        let who = corpus.annotator_ids().first().cloned().unwrap_or_default();
        return Err(InferError::NoTrainingRows(who));
    }
    let texts: Vec<String> = rows.iter().map(|&i| corpus.texts()[i].clone()).collect();
    let ids: Vec<String> = rows.iter().map(|&i| corpus.argument_ids()[i].clone()).collect();
    let audit = options.audit;

    let (states, history) = match variant {
        IsVariant::Each => {
            let trained: Vec<(ModelState, Vec<EpochLoss>)> = (0..m)
                .into_par_iter()
                .map(|j| -> Result<_, InferError> {
                    let targets = annotator_targets(corpus, &rows, j, j, audit);
                    let mut state = ModelState::new(
                        encoder,
                        &[HeadKind::MultiLabel(k)],
                        seed::derive(train.seed, "is-each", j as u64),
                    )?;
                    let cfg = TrainConfig {
                        seed: seed::derive(train.seed, "is-each-run", j as u64),
                        ..train.clone()
                    };
                    let hist = run_epochs(&mut state, rows.len(), &cfg, &mut MultiLabelBce, &mut |idx, _| Batch {
                        ids: select(&ids, idx),
                        texts: select(&texts, idx),
                        alt_texts: None,
                        targets: vec![targets.select(Axis(0), idx)],
                    })?;
                    Ok((state, hist))
                })
                .collect::<Result<_, _>>()?;
            trained.into_iter().unzip()
        }
        IsVariant::Shared => {
            let targets: Vec<Array2<f64>> = (0..m).map(|j| annotator_targets(corpus, &rows, j, 0, audit)).collect();
            let heads = vec![HeadKind::MultiLabel(k); m];
            let mut state = ModelState::new(encoder, &heads, seed::derive(train.seed, "is-shared", 0))?;
            let hist = run_epochs(&mut state, rows.len(), train, &mut MultiLabelBce, &mut |idx, _| Batch {
                ids: select(&ids, idx),
                texts: select(&texts, idx),
                alt_texts: None,
                targets: targets.iter().map(|t| t.select(Axis(0), idx)).collect(),
            })?;
            (vec![state], vec![hist])
        }
        IsVariant::Single => {
            if !options.token_format.contains("{text}") {
                return Err(InferError::TokenFormat(options.token_format.clone()));
            }
            let n = rows.len();
            let targets: Vec<Array2<f64>> = (0..m).map(|j| annotator_targets(corpus, &rows, j, 0, audit)).collect();
            // Item `j * n + r` is row `r` seen through annotator `j`.
            let tagged: Vec<String> = (0..m)
                .flat_map(|j| {
                    let aid = &corpus.annotator_ids()[j];
                    texts
                        .iter()
                        .map(move |t| format_annotator_input(&options.token_format, aid, t))
                })
                .collect();
            let tagged_ids: Vec<String> = (0..m)
                .flat_map(|j| ids.iter().map(move |id| format!("{id}/{}", corpus.annotator_ids()[j])))
                .collect();
            let mut state = ModelState::new(encoder, &[HeadKind::MultiLabel(k)], seed::derive(train.seed, "is-single", 0))?;
            let hist = run_epochs(&mut state, n * m, train, &mut MultiLabelBce, &mut |idx, _| Batch {
                ids: select(&tagged_ids, idx),
                texts: select(&tagged, idx),
                alt_texts: None,
                targets: vec![Array2::from_shape_fn((idx.len(), k), |(r, v)| {
                    let (j, row) = (idx[r] / n, idx[r] % n);
                    targets[j][[row, v]]
                })],
            })?;
            (vec![state], vec![hist])
        }
    };

    Ok(IsModelBundle {
        variant,
        annotator_ids: corpus.annotator_ids().to_vec(),
        value_names: corpus.value_selection().names().to_vec(),
        token_format: (variant == IsVariant::Single).then(|| options.token_format.clone()),
        states,
        thresholds: Array2::from_elem((m, k), 0.5),
        train: train.clone(),
        history,
    })
}

/// Binary predictions `[n, m, k]`: `sigmoid(logit) > threshold`.
pub fn predict_annotator_labels(bundle: &IsModelBundle, texts: &[String]) -> Result<Array3<u8>, InferError> {
    let scores = bundle.scores(texts)?;
    let mut out = Array3::zeros(scores.dim());
    for ((i, j, v), &s) in scores.indexed_iter() {
        out[[i, j, v]] = u8::from(s > bundle.thresholds[[j, v]]);
    }
    Ok(out)
}

/// Cell `(i, v)` is 1 iff the predictions over annotators are not all equal.
pub fn infer_subjectivity_from_predictions(pred: &Array3<u8>) -> Result<Array2<u8>, InferError> {
    let (n, m, k) = pred.dim();
    if m < 2 {
        return Err(InferError::TooFewAnnotators(m));
    }
    Ok(Array2::from_shape_fn((n, k), |(i, v)| lane_subjectivity(pred.slice(s![i, .., v]))))
}

/// Picks, per annotator and value, the threshold on a 0.05 grid that
/// maximises F1 of that annotator's labels on the validation part. Ties
/// go to the threshold closest to 0.5.
pub fn tune_thresholds(bundle: &mut IsModelBundle, corpus: &Corpus, split: &SplitSpec) -> Result<(), InferError> {
    let rows = rows_of(corpus, split, SplitPart::Val)?;
    if rows.is_empty() {
        log::warn!("empty validation part, thresholds left at their current values");
        return Ok(());
    }
    let texts: Vec<String> = rows.iter().map(|&i| corpus.texts()[i].clone()).collect();
    let scores = bundle.scores(&texts)?;
    let ann = corpus.annotations();
    let grid: Vec<f64> = (1..20).map(|t| t as f64 * 0.05).collect();
    for j in 0..bundle.m() {
        for v in 0..bundle.k() {
            let gold: Vec<bool> = rows.iter().map(|&i| ann[[i, j, v]] == 1).collect();
            let mut best: (f64, f64) = (f64::NEG_INFINITY, 0.5);
            for &t in &grid {
                let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
                for (r, &g) in gold.iter().enumerate() {
                    match (scores[[r, j, v]] > t, g) {
                        (true, true) => tp += 1.0,
                        (true, false) => fp += 1.0,
                        (false, true) => fn_ += 1.0,
                        _ => {}
                    }
                }
                let f1 = if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 };
                let closer = (t - 0.5).abs() < (best.1 - 0.5).abs();
                if f1 > best.0 + 1e-12 || ((f1 - best.0).abs() <= 1e-12 && closer) {
                    best = (f1, t);
                }
            }
            bundle.thresholds[[j, v]] = best.1;
        }
    }
    Ok(())
}

/// Predicted subjectivity `[n, k]` for the given texts.
pub fn predict_subjectivity(bundle: &IsModelBundle, texts: &[String]) -> Result<Array2<u8>, InferError> {
    infer_subjectivity_from_predictions(&predict_annotator_labels(bundle, texts)?)
}

/// Mean BCE over `k` values for one row of logits and labels.
pub fn multi_label_bce(logits: ArrayView2<'_, f64>, labels: ArrayView2<'_, f64>) -> f64 {
    crate::direct::bce_loss(logits, labels)
}
