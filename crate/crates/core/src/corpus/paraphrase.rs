use std::time::Duration;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::seed;
use crate::transport::{JsonLinesWorker, TransportError};

/// Fraction of non-initial tokens the fallback paraphraser may drop.
pub const DEFAULT_DROPOUT_RATE: f64 = 0.15;

/// Decoding settings forwarded to a paraphrase model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeParams {
    pub sampling: String,
    pub temperature: f64,
    pub top_k: u32,
    pub top_p: f64,
    pub repetition_penalty: f64,
}

impl Default for DecodeParams {
    fn default() -> Self {
        Self {
            sampling: "top_k".into(),
            temperature: 2.0,
            top_k: 40,
            top_p: 0.85,
            repetition_penalty: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParaphraseRequest {
    pub text: String,
    pub n_candidates: usize,
    pub seed: u64,
    pub decode: DecodeParams,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParaphraseResponse {
    pub paraphrases: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum ParaphraseError {
    #[error("paraphraser unavailable: {0}")]
    Unavailable(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

pub trait ParaphraseClient: Send + Sync {
    fn name(&self) -> &str;
    fn paraphrase(&self, request: &ParaphraseRequest) -> Result<ParaphraseResponse, ParaphraseError>;
}

/// Drops `floor(rate * (n - 1))` of the non-initial whitespace tokens,
/// chosen uniformly with the given seed. Texts too short to lose a token
/// come back unchanged.
pub fn word_dropout(text: &str, seed: u64, rate: f64) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() < 2 {
        return tokens.join(" ");
    }
    let tail = tokens.len() - 1;
    let n_drop = ((tail as f64) * rate).floor() as usize;
    if n_drop == 0 {
        return tokens.join(" ");
    }
    let mut rng = seed::rng(seed, "word-dropout", 0);
    let mut drop = vec![false; tokens.len()];
    for i in index::sample(&mut rng, tail, n_drop) {
        drop[i + 1] = true;
    }
    tokens
        .iter()
        .zip(&drop)
        .filter(|(_, &d)| !d)
        .map(|(t, _)| *t)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Offline paraphraser: seeded word dropout. A pure function of the request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WordDropout {
    pub rate: f64,
}

impl Default for WordDropout {
    fn default() -> Self {
        Self {
            rate: DEFAULT_DROPOUT_RATE,
        }
    }
}

impl ParaphraseClient for WordDropout {
    fn name(&self) -> &str {
        "word-dropout"
    }

    fn paraphrase(&self, request: &ParaphraseRequest) -> Result<ParaphraseResponse, ParaphraseError> {
        let paraphrases = (0..request.n_candidates.max(1))
            .map(|c| word_dropout(&request.text, seed::derive(request.seed, "candidate", c as u64), self.rate))
            .collect();
        Ok(ParaphraseResponse { paraphrases })
    }
}

/// Paraphrase model served by a JSON-lines worker process.
#[derive(Debug)]
pub struct ProcessParaphraser {
    worker: JsonLinesWorker,
}

impl ProcessParaphraser {
    pub fn spawn(command: &[String], timeout: Duration) -> Result<Self, ParaphraseError> {
        Ok(Self {
            worker: JsonLinesWorker::spawn(command, timeout)?,
        })
    }
}

impl ParaphraseClient for ProcessParaphraser {
    fn name(&self) -> &str {
        "process"
    }

    fn paraphrase(&self, request: &ParaphraseRequest) -> Result<ParaphraseResponse, ParaphraseError> {
        Ok(self.worker.request(request)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dropout_keeps_first_token_and_respects_cap() {
        let text = "alpha b c d e f g h i j k l m n o p q r s t u";
        let out = word_dropout(text, 3, 0.15);
        let n_in = text.split_whitespace().count();
        let n_out = out.split_whitespace().count();
        assert!(out.starts_with("alpha "));
        assert_eq!(n_in - n_out, 3); // floor(0.15 * 20)
        assert_eq!(out, word_dropout(text, 3, 0.15));
        assert_ne!(out, word_dropout(text, 4, 0.15));
    }

    #[test]
    fn short_texts_are_copied() {
        assert_eq!(word_dropout("just three words", 1, 0.15), "just three words");
        assert_eq!(word_dropout("", 1, 0.15), "");
    }

    #[test]
    fn decode_defaults() {
        let d = DecodeParams::default();
        assert_eq!((d.temperature, d.top_k, d.top_p, d.repetition_penalty), (2.0, 40, 0.85, 1.5));
    }

    #[test]
    fn process_client_speaks_json_lines() {
        let Some(py) = crate::transport::tests::python() else {
            return;
        };
        let script = r#"
import json, sys
for line in sys.stdin:
    r = json.loads(line)
    assert r["decode"]["top_k"] == 40
    out = [r["text"] + " (p%d)" % i for i in range(r["n_candidates"])]
    print(json.dumps({"id": r["id"], "paraphrases": out}), flush=True)
"#;
        let client = ProcessParaphraser::spawn(&[py, "-c".into(), script.into()], Duration::from_secs(5)).unwrap();
        let resp = client
            .paraphrase(&ParaphraseRequest {
                text: "hello".into(),
                n_candidates: 2,
                seed: 0,
                decode: DecodeParams::default(),
            })
            .unwrap();
        assert_eq!(resp.paraphrases, vec!["hello (p0)", "hello (p1)"]);
    }
}
