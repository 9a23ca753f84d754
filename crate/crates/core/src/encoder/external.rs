use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{EncoderConfig, EncoderError};
use crate::transport::JsonLinesWorker;

/// Where and how to reach a pretrained encoder runtime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalConfig {
    /// Worker command line, e.g. `["python3", "scripts/hf_encoder_worker.py"]`.
    pub command: Vec<String>,
    pub model_id: String,
    #[serde(default)]
    pub revision: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    300
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    op: &'static str,
    texts: &'a [String],
    model_id: &'a str,
    revision: &'a str,
    max_sequence_length: usize,
    pooling: &'static str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f64>>,
}

#[derive(Default)]
struct Runtime {
    worker: Option<JsonLinesWorker>,
    cache: HashMap<String, Vec<f64>>,
}

/// Frozen pretrained encoder served by a worker process. Embeddings are
/// memoised per text for the lifetime of the value.
#[derive(Clone, Serialize, Deserialize)]
pub struct ExternalEncoder {
    config: ExternalConfig,
    dim: usize,
    max_sequence_length: usize,
    #[serde(skip)]
    runtime: Arc<Mutex<Runtime>>,
}

impl std::fmt::Debug for ExternalEncoder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalEncoder")
            .field("config", &self.config)
            .field("dim", &self.dim)
            .finish()
    }
}

impl PartialEq for ExternalEncoder {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.dim == other.dim && self.max_sequence_length == other.max_sequence_length
    }
}

impl ExternalEncoder {
    pub fn new(config: &EncoderConfig) -> Result<Self, EncoderError> {
        let ext = config
            .external
            .clone()
            .ok_or_else(|| EncoderError::InvalidConfig("missing external backend settings".into()))?;
        Ok(Self {
            config: ext,
            dim: config.embedding_dim,
            max_sequence_length: config.max_sequence_length,
            runtime: Arc::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, texts: &[String]) -> Result<Array2<f64>, EncoderError> {
        let mut rt = self.runtime.lock().unwrap_or_else(|e| e.into_inner());
        let mut missing: Vec<String> = texts.iter().filter(|t| !rt.cache.contains_key(*t)).cloned().collect();
        missing.sort();
        missing.dedup();
        if !missing.is_empty() {
            if rt.worker.is_none() {
                let worker = JsonLinesWorker::spawn(&self.config.command, Duration::from_secs(self.config.timeout_secs))
                    .map_err(|e| EncoderError::Backend(e.to_string()))?;
                rt.worker = Some(worker);
            }
            let worker = rt.worker.as_ref().expect("spawned above");
            let resp: EmbedResponse = worker
                .request(&EmbedRequest {
                    op: "embed",
                    texts: &missing,
                    model_id: &self.config.model_id,
                    revision: &self.config.revision,
                    max_sequence_length: self.max_sequence_length,
                    pooling: "mean",
                })
                .map_err(|e| EncoderError::Backend(e.to_string()))?;
            if resp.embeddings.len() != missing.len() {
                return Err(EncoderError::Backend(format!(
                    "worker returned {} embeddings for {} texts",
                    resp.embeddings.len(),
                    missing.len()
                )));
            }
            for (text, row) in missing.into_iter().zip(resp.embeddings) {
                if row.len() != self.dim {
                    return Err(EncoderError::DimensionMismatch {
                        expected: self.dim,
                        found: row.len(),
                    });
                }
                rt.cache.insert(text, row);
            }
        }
        let mut out = Array2::zeros((texts.len(), self.dim));
        for (mut row, text) in out.rows_mut().into_iter().zip(texts) {
            row.iter_mut().zip(&rt.cache[text]).for_each(|(r, x)| *r = *x);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FAKE: &str = r#"
import json, sys
for line in sys.stdin:
    r = json.loads(line)
    out = [[float(len(t)), float(len(t.split()))] for t in r["texts"]]
    print(json.dumps({"id": r["id"], "embeddings": out}), flush=True)
"#;

    fn config(command: Vec<String>, dim: usize) -> EncoderConfig {
        EncoderConfig {
            backend_id: "external".into(),
            embedding_dim: dim,
            external: Some(ExternalConfig {
                command,
                model_id: "fake".into(),
                revision: String::new(),
                timeout_secs: 10,
            }),
            ..Default::default()
        }
    }

    #[test]
    fn embeds_through_worker() {
        let Some(py) = crate::transport::tests::python() else {
            return;
        };
        let enc = ExternalEncoder::new(&config(vec![py, "-c".into(), FAKE.into()], 2)).unwrap();
        let out = enc.embed(&["ab cd".into(), "x".into(), "ab cd".into()]).unwrap();
        assert_eq!(out.row(0).to_vec(), vec![5.0, 2.0]);
        assert_eq!(out.row(1).to_vec(), vec![1.0, 1.0]);
        assert_eq!(out.row(0), out.row(2));
    }

    #[test]
    fn wrong_dimension_is_reported() {
        let Some(py) = crate::transport::tests::python() else {
            return;
        };
        let enc = ExternalEncoder::new(&config(vec![py, "-c".into(), FAKE.into()], 3)).unwrap();
        assert!(matches!(
            enc.embed(&["a".into()]),
            Err(EncoderError::DimensionMismatch { expected: 3, found: 2 })
        ));
    }

    #[test]
    fn missing_worker_is_a_backend_error() {
        let enc = ExternalEncoder::new(&config(vec!["/nonexistent/encoder".into()], 2)).unwrap();
        assert!(matches!(enc.embed(&["a".into()]), Err(EncoderError::Backend(_))));
    }
}
