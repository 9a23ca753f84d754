//! Generated annotation corpora with keyword-determined labels.
//!
//! Each (argument, value) cell is in one of three states. `clear` cells
//! carry the token `value{v}` and every core annotator marks the value;
//! `disputed` cells carry `contested{v}` and only the first half of the
//! core annotators mark it; the rest carry neither token and nobody marks
//! it. Subjectivity therefore equals the presence of `contested{v}`, and
//! annotator 1 always copies annotator 0.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::AnnotationRecord;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_arguments: usize,
    pub n_annotators: usize,
    pub n_values: usize,
    /// Sparse annotators covering a fraction of the arguments.
    pub extra_annotators: usize,
    /// Rarely used taxonomy columns after the core values.
    pub extra_columns: usize,
    pub vocabulary: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub p_clear: f64,
    pub p_disputed: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_arguments: 500,
            n_annotators: 4,
            n_values: 4,
            extra_annotators: 2,
            extra_columns: 2,
            vocabulary: 200,
            min_words: 8,
            max_words: 16,
            p_clear: 0.3,
            p_disputed: 0.3,
            seed: 0,
        }
    }
}

pub fn argument_id(i: usize) -> String {
    format!("S{i:05}")
}

pub fn annotator_id(j: usize) -> String {
    format!("W{j:03}")
}

/// Records in argument-major order.
pub fn generate(cfg: &SyntheticConfig) -> Vec<AnnotationRecord> {
    let width = cfg.n_values + cfg.extra_columns;
    let mut records = Vec::new();
    let agree = cfg.n_annotators.div_ceil(2);
    for i in 0..cfg.n_arguments {
        let mut rng = seed::rng(cfg.seed, "synthetic-argument", i as u64);
        let n_words = rng.random_range(cfg.min_words..=cfg.max_words.max(cfg.min_words));
        let mut words: Vec<String> = (0..n_words)
            .map(|_| format!("w{}", rng.random_range(0..cfg.vocabulary.max(1))))
            .collect();
        let mut states = Vec::with_capacity(cfg.n_values);
        for v in 0..cfg.n_values {
            let u: f64 = rng.random();
            let state = if u < cfg.p_clear {
                words.insert(rng.random_range(0..=words.len()), format!("value{v}"));
                1
            } else if u < cfg.p_clear + cfg.p_disputed {
                words.insert(rng.random_range(0..=words.len()), format!("contested{v}"));
                2
            } else {
                0
            };
            states.push(state);
        }
        let text = words.join(" ");
        for j in 0..cfg.n_annotators {
            let mut labels = vec![0u8; width];
            for (v, &s) in states.iter().enumerate() {
                labels[v] = u8::from(s == 1 || (s == 2 && j < agree));
            }
            for l in &mut labels[cfg.n_values..] {
                *l = u8::from(rng.random_bool(0.02));
            }
            records.push(AnnotationRecord {
                argument_id: argument_id(i),
                annotator_id: annotator_id(j),
                text: text.clone(),
                labels,
            });
        }
    }
    for e in 0..cfg.extra_annotators {
        let j = cfg.n_annotators + e;
        let mut rng = seed::rng(cfg.seed, "synthetic-extra", j as u64);
        let amount = cfg.n_arguments / 3;
        let mut picked = index::sample(&mut rng, cfg.n_arguments, amount).into_vec();
        picked.sort_unstable();
        for i in picked {
            let text = records[i * cfg.n_annotators].text.clone();
            let labels = (0..width).map(|_| u8::from(rng.random_bool(0.2))).collect();
            records.push(AnnotationRecord {
                argument_id: argument_id(i),
                annotator_id: annotator_id(j),
                text,
                labels,
            });
        }
    }
    records
}

/// Writes records as a tab-separated table with a header row.
pub fn write_tsv<W: Write>(records: &[AnnotationRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "Argument ID\tWorker ID\tPremise\tLabels")?;
    for r in records {
        let labels: Vec<String> = r.labels.iter().map(u8::to_string).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t[{}]",
            r.argument_id,
            r.annotator_id,
            r.text,
            labels.join(", ")
        )?;
    }
    Ok(())
}
