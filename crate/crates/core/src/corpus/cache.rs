use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError};

pub const CORPUS_FORMAT: &str = "subjlab-corpus";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CorpusFile {
    format: String,
    version: u32,
    /// Free-form provenance (input path, digest, selection settings).
    source: serde_json::Value,
    corpus: Corpus,
}

/// Writes the corpus with a versioned header; identical inputs give
/// identical bytes.
pub fn save_corpus(path: impl AsRef<Path>, corpus: &Corpus, source: serde_json::Value) -> Result<(), CorpusError> {
    let file = CorpusFile {
        format: CORPUS_FORMAT.into(),
        version: CORPUS_VERSION,
        source,
        corpus: corpus.clone(),
    };
    let bytes = serde_json::to_vec(&file).map_err(|e| CorpusError::Cache(e.to_string()))?;
    if let Some(parent) = path.as_ref().parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<(Corpus, serde_json::Value), CorpusError> {
    let bytes = fs::read(path)?;
    let file: CorpusFile = serde_json::from_slice(&bytes).map_err(|e| CorpusError::Cache(e.to_string()))?;
    if file.format != CORPUS_FORMAT || file.version != CORPUS_VERSION {
        return Err(CorpusError::Cache(format!(
            "unsupported cache {} v{}",
            file.format, file.version
        )));
    }
    // Re-derive so a hand-edited cache cannot carry inconsistent labels.
    let c = file.corpus;
    let rebuilt = Corpus::from_parts(
        c.argument_ids.clone(),
        c.texts.clone(),
        c.annotator_ids.clone(),
        c.annotations.clone(),
        c.value_selection.clone(),
    )?;
    if rebuilt.subjectivity != c.subjectivity {
        return Err(CorpusError::Cache("subjectivity matrix does not match annotations".into()));
    }
    Ok((rebuilt, file.source))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ValueSelection;
    use ndarray::Array3;

    #[test]
    fn round_trip_is_byte_stable() {
        let corpus = Corpus::from_parts(
            vec!["a".into(), "b".into()],
            vec!["x y".into(), "z".into()],
            vec!["W1".into(), "W2".into()],
            Array3::from_shape_vec((2, 2, 1), vec![1, 0, 1, 1]).unwrap(),
            ValueSelection::new(vec!["v".into()], vec![0], 1).unwrap(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("c1.json");
        let p2 = dir.path().join("c2.json");
        save_corpus(&p1, &corpus, serde_json::json!({"input": "x"})).unwrap();
        let (loaded, source) = load_corpus(&p1).unwrap();
        assert_eq!(loaded, corpus);
        assert_eq!(source["input"], "x");
        save_corpus(&p2, &loaded, source).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_foreign_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        fs::write(&p, r#"{"format":"other","version":1,"source":null,"corpus":null}"#).unwrap();
        assert!(load_corpus(&p).is_err());
    }
}
