//! Text encoders, classification heads and the shared training step.
//!
//! Two backends sit behind [`Encoder`]: a deterministic hashed-token toy
//! encoder with a trainable token table, and a frozen adapter over an
//! external model runtime reached through a JSON-lines worker process.

mod checkpoint;
mod external;
mod head;
mod optim;
mod toy;
mod train;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use external::{ExternalConfig, ExternalEncoder};
pub use head::{head_forward, ClassificationHead, HeadKind};
pub use optim::{Optimizer, OptimizerKind};
pub use toy::{ToyEncoder, PAD_TOKEN};
pub use train::{
    run_epochs, train_step, Batch, EpochLoss, Gradients, LossBreakdown, LossFn, ModelState, StepInputs,
    StepOutputs, TrainConfig,
};

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("backend unavailable: {0}")]
    Backend(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at step {step} (batch ids: {ids:?})")]
    Divergence { step: u64, ids: Vec<String> },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// `toy` or `external`.
    pub backend_id: String,
    pub max_sequence_length: usize,
    pub embedding_dim: usize,
    pub pooling: Pooling,
    pub trainable: bool,
    /// Dropout rate on pooled embeddings during training.
    pub dropout: f64,
    /// Seed of the toy backend's token hash.
    pub hash_seed: u64,
    pub external: Option<ExternalConfig>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            backend_id: "toy".into(),
            max_sequence_length: 128,
            embedding_dim: 64,
            pooling: Pooling::Mean,
            trainable: true,
            dropout: 0.1,
            hash_seed: 0,
            external: None,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.max_sequence_length == 0 {
            return Err(EncoderError::InvalidConfig("max_sequence_length must be at least 1".into()));
        }
        if self.embedding_dim == 0 {
            return Err(EncoderError::InvalidConfig("embedding_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(EncoderError::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        match self.backend_id.as_str() {
            "toy" => Ok(()),
            "external" if self.external.is_some() => Ok(()),
            "external" => Err(EncoderError::InvalidConfig("external backend needs an `external` section".into())),
            other => Err(EncoderError::UnknownBackend(other.into())),
        }
    }
}

/// Per-text token lists kept from a training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    tokens: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum Encoder {
    Toy(ToyEncoder),
    External(ExternalEncoder),
}

impl Encoder {
    pub fn from_config(config: &EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        match config.backend_id.as_str() {
            "toy" => Ok(Self::Toy(ToyEncoder::new(config))),
            _ => Ok(Self::External(ExternalEncoder::new(config)?)),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Toy(t) => t.dim(),
            Self::External(e) => e.dim(),
        }
    }

    pub fn is_trainable(&self) -> bool {
        match self {
            Self::Toy(t) => t.trainable,
            Self::External(_) => false,
        }
    }

    /// Evaluation-mode embeddings, one row per text.
    pub fn embed(&self, texts: &[String]) -> Result<Array2<f64>, EncoderError> {
        match self {
            Self::Toy(t) => Ok(t.embed(texts)),
            Self::External(e) => e.embed(texts),
        }
    }

    pub fn forward(&self, texts: &[String]) -> Result<(Array2<f64>, ForwardCache), EncoderError> {
        match self {
            Self::Toy(t) => {
                let tokens: Vec<Vec<String>> = texts.iter().map(|s| t.tokenize(s)).collect();
                Ok((t.pool(&tokens), ForwardCache { tokens }))
            }
            Self::External(e) => Ok((e.embed(texts)?, ForwardCache { tokens: Vec::new() })),
        }
    }

    /// Accumulates parameter gradients given the gradient of the pooled
    /// embeddings. Frozen encoders contribute nothing.
    pub fn backward(&self, cache: &ForwardCache, grad: ArrayView2<'_, f64>, grads: &mut Gradients) {
        if let Self::Toy(t) = self {
            if t.trainable {
                t.backward(&cache.tokens, grad, grads);
            }
        }
    }

    pub(crate) fn param_mut(&mut self, token: &str) -> Option<&mut [f64]> {
        match self {
            Self::Toy(t) => Some(t.param_mut(token)),
            Self::External(_) => None,
        }
    }
}
