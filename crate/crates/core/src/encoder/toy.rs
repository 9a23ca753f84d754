use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{EncoderConfig, Gradients};
use crate::seed;

/// Token standing in for an empty text.
pub const PAD_TOKEN: &str = "[PAD]";

/// Whitespace tokens, each mapped to a vector drawn from a generator seeded
/// by a hash of the token, then mean-pooled.
///
/// Trained token vectors live in `table` and shadow the hashed ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    dim: usize,
    hash_seed: u64,
    max_sequence_length: usize,
    pub trainable: bool,
    table: BTreeMap<String, Vec<f64>>,
}

impl ToyEncoder {
    pub fn new(config: &EncoderConfig) -> Self {
        Self {
            dim: config.embedding_dim,
            hash_seed: config.hash_seed,
            max_sequence_length: config.max_sequence_length,
            trainable: config.trainable,
            table: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let tokens: Vec<String> = text
            .split_whitespace()
            .take(self.max_sequence_length)
            .map(str::to_owned)
            .collect();
        if tokens.is_empty() {
            vec![PAD_TOKEN.to_owned()]
        } else {
            tokens
        }
    }

    /// The untrained vector of a token: i.i.d. normal entries scaled by
    /// `1/sqrt(dim)`.
    pub fn base_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = seed::rng(self.hash_seed, token, 0);
        let scale = 1.0 / (self.dim as f64).sqrt();
        (0..self.dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect()
    }

    pub fn vector(&self, token: &str) -> Vec<f64> {
        match self.table.get(token) {
            Some(v) => v.clone(),
            None => self.base_vector(token),
        }
    }

    pub fn embed(&self, texts: &[String]) -> Array2<f64> {
        let tokens: Vec<Vec<String>> = texts.iter().map(|t| self.tokenize(t)).collect();
        self.pool(&tokens)
    }

    pub(crate) fn pool(&self, tokens: &[Vec<String>]) -> Array2<f64> {
        let mut out = Array2::zeros((tokens.len(), self.dim));
        for (mut row, toks) in out.rows_mut().into_iter().zip(tokens) {
            for tok in toks {
                match self.table.get(tok) {
                    Some(v) => row.iter_mut().zip(v).for_each(|(r, x)| *r += x),
                    None => row.iter_mut().zip(self.base_vector(tok)).for_each(|(r, x)| *r += x),
                }
            }
            row /= toks.len() as f64;
        }
        out
    }

    pub(crate) fn backward(&self, tokens: &[Vec<String>], grad: ArrayView2<'_, f64>, grads: &mut Gradients) {
        for (toks, g) in tokens.iter().zip(grad.rows()) {
            let inv = 1.0 / toks.len() as f64;
            for tok in toks {
                let slot = grads
                    .entry(format!("tok.{tok}"))
                    .or_insert_with(|| vec![0.0; self.dim]);
                slot.iter_mut().zip(g).for_each(|(s, x)| *s += x * inv);
            }
        }
    }

    pub(crate) fn param_mut(&mut self, token: &str) -> &mut [f64] {
        if !self.table.contains_key(token) {
            let base = self.base_vector(token);
            self.table.insert(token.to_owned(), base);
        }
        self.table.get_mut(token).expect("inserted above")
    }

    pub fn trained_tokens(&self) -> usize {
        self.table.len()
    }
}
