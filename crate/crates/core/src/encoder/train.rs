use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{head_forward, ClassificationHead, Encoder, EncoderConfig, EncoderError, HeadKind, Optimizer, OptimizerKind};
use crate::seed;

/// Parameter gradients keyed by parameter name (`head.{h}.weight`,
/// `head.{h}.bias`, `tok.{token}`).
pub type Gradients = BTreeMap<String, Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub seed: u64,
    /// Weight of the contrastive term; 0 disables it.
    pub lambda_cl: f64,
    pub margin: f64,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1e-5,
            epochs: 10,
            optimizer: OptimizerKind::AdamW,
            weight_decay: 0.01,
            seed: 0,
            lambda_cl: 0.0,
            margin: 1.0,
            temperature: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if !(self.lambda_cl >= 0.0 && self.lambda_cl.is_finite()) {
            return bad("lambda_cl must be finite and non-negative");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be finite and non-negative");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bce: f64,
    pub cl: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(bce: f64, cl: f64, lambda: f64) -> Self {
        Self {
            bce,
            cl,
            lambda,
            total: bce + lambda * cl,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub texts: Vec<String>,
    /// Texts for the second view, when the loss asks for two.
    pub alt_texts: Option<Vec<String>>,
    /// One `[batch, out_dim]` target matrix per head.
    pub targets: Vec<Array2<f64>>,
}

pub struct StepInputs<'a> {
    pub batch: &'a Batch,
    /// Pooled embeddings after dropout, one matrix per view.
    pub views: &'a [Array2<f64>],
    /// Head outputs on the first view.
    pub logits: &'a [Array2<f64>],
    pub step: u64,
}

pub struct StepOutputs {
    pub loss: LossBreakdown,
    pub grad_logits: Vec<Array2<f64>>,
    /// Extra gradient on each view, e.g. from a contrastive term.
    pub grad_views: Vec<Option<Array2<f64>>>,
}

pub trait LossFn {
    fn views(&self) -> usize {
        1
    }
    fn compute(&mut self, inputs: &StepInputs<'_>) -> StepOutputs;
}

/// An encoder with its heads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: EncoderConfig,
    pub encoder: Encoder,
    pub heads: Vec<ClassificationHead>,
    pub step: u64,
}

impl ModelState {
    pub fn new(config: &EncoderConfig, heads: &[HeadKind], seed: u64) -> Result<Self, EncoderError> {
        let encoder = Encoder::from_config(config)?;
        let dim = encoder.dim();
        let heads = heads
            .iter()
            .enumerate()
            .map(|(h, &kind)| ClassificationHead::init(kind, dim, &mut seed::rng(seed, "head-init", h as u64)))
            .collect();
        Ok(Self {
            config: config.clone(),
            encoder,
            heads,
            step: 0,
        })
    }

    pub fn embed(&self, texts: &[String]) -> Result<Array2<f64>, EncoderError> {
        self.encoder.embed(texts)
    }

    pub fn logits(&self, texts: &[String], head: usize) -> Result<Array2<f64>, EncoderError> {
        let emb = self.embed(texts)?;
        head_forward(emb.view(), &self.heads[head])
    }

    fn param_mut(&mut self, key: &str) -> Option<&mut [f64]> {
        if let Some(tok) = key.strip_prefix("tok.") {
            return self.encoder.param_mut(tok);
        }
        let rest = key.strip_prefix("head.")?;
        let (h, what) = rest.split_once('.')?;
        let head = self.heads.get_mut(h.parse::<usize>().ok()?)?;
        match what {
            "weight" => head.weight.as_slice_mut(),
            "bias" => head.bias.as_slice_mut(),
            _ => None,
        }
    }
}

fn dropout_mask<R: Rng>(rng: &mut R, shape: (usize, usize), p: f64) -> Option<Array2<f64>> {
    if p == 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(Array2::from_shape_simple_fn(shape, || if rng.random::<f64>() < p { 0.0 } else { keep }))
}

/// One optimizer update on one batch.
///
/// Dropout masks come from a stream keyed by `(train.seed, state.step)`,
/// so a run is reproducible regardless of what the loss draws.
pub fn train_step(
    state: &mut ModelState,
    optimizer: &mut Optimizer,
    batch: &Batch,
    loss_fn: &mut dyn LossFn,
    train: &TrainConfig,
) -> Result<LossBreakdown, EncoderError> {
    let n_views = loss_fn.views().max(1);
    let mut rng = seed::rng(train.seed, "dropout", state.step);
    let mut views = Vec::with_capacity(n_views);
    let mut caches = Vec::with_capacity(n_views);
    let mut masks = Vec::with_capacity(n_views);
    for v in 0..n_views {
        let texts = match (&batch.alt_texts, v) {
            (Some(alt), 1..) => alt,
            _ => &batch.texts,
        };
        let (mut emb, cache) = state.encoder.forward(texts)?;
        let mask = dropout_mask(&mut rng, emb.dim(), state.config.dropout);
        if let Some(m) = &mask {
            emb *= m;
        }
        views.push(emb);
        caches.push(cache);
        masks.push(mask);
    }
    let logits = state
        .heads
        .iter()
        .map(|h| head_forward(views[0].view(), h))
        .collect::<Result<Vec<_>, _>>()?;

    let out = loss_fn.compute(&StepInputs {
        batch,
        views: &views,
        logits: &logits,
        step: state.step,
    });
    if !out.loss.total.is_finite() {
        return Err(EncoderError::Divergence {
            step: state.step,
            ids: batch.ids.clone(),
        });
    }

    let mut grads = Gradients::new();
    let mut grad_views: Vec<Option<Array2<f64>>> = out.grad_views;
    grad_views.resize(n_views, None);
    for (h, (head, g)) in state.heads.iter().zip(&out.grad_logits).enumerate() {
        let gw = views[0].t().dot(g);
        let gb = g.sum_axis(Axis(0));
        grads.insert(format!("head.{h}.weight"), gw.into_iter().collect());
        grads.insert(format!("head.{h}.bias"), gb.to_vec());
        let back = g.dot(&head.weight.t());
        match &mut grad_views[0] {
            Some(acc) => *acc += &back,
            slot @ None => *slot = Some(back),
        }
    }
    if state.encoder.is_trainable() {
        for ((gv, mask), cache) in grad_views.iter().zip(&masks).zip(&caches) {
            let Some(gv) = gv else { continue };
            let gv = match mask {
                Some(m) => gv * m,
                None => gv.clone(),
            };
            state.encoder.backward(cache, gv.view(), &mut grads);
        }
    }

    for (key, g) in &grads {
        if let Some(param) = state.param_mut(key) {
            optimizer.update(key, param, g);
        }
    }
    state.step += 1;
    Ok(out.loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub bce: f64,
    pub cl: f64,
    pub total: f64,
    pub batches: usize,
}

/// Shuffled mini-batch epochs over `n_items` examples. `make_batch`
/// receives the item indices of each batch and the epoch number.
pub fn run_epochs(
    state: &mut ModelState,
    n_items: usize,
    train: &TrainConfig,
    loss_fn: &mut dyn LossFn,
    make_batch: &mut dyn FnMut(&[usize], usize) -> Batch,
) -> Result<Vec<EpochLoss>, EncoderError> {
    train.validate()?;
    let mut optimizer = Optimizer::new(train.optimizer, train.learning_rate, train.weight_decay);
    let mut history = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        let mut order: Vec<usize> = (0..n_items).collect();
        order.shuffle(&mut seed::rng(train.seed, "shuffle", epoch as u64));
        let mut sum = LossBreakdown::default();
        let mut batches = 0;
        for chunk in order.chunks(train.batch_size) {
            let batch = make_batch(chunk, epoch);
            let loss = train_step(state, &mut optimizer, &batch, loss_fn, train)?;
            sum.bce += loss.bce;
            sum.cl += loss.cl;
            sum.total += loss.total;
            batches += 1;
        }
        let d = batches.max(1) as f64;
        let record = EpochLoss {
            epoch,
            bce: sum.bce / d,
            cl: sum.cl / d,
            total: sum.total / d,
            batches,
        };
        log::debug!("epoch {epoch}: total {:.6}", record.total);
        history.push(record);
    }
    Ok(history)
}
