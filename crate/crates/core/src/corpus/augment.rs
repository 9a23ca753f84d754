use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::paraphrase::{word_dropout, DecodeParams, ParaphraseClient, ParaphraseRequest, DEFAULT_DROPOUT_RATE};
use super::CorpusError;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Client,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    Paraphrase { source: usize, generator: Generator },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPair {
    pub text: String,
    pub label: u8,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentOutcome {
    /// Originals in input order, then generated items.
    pub items: Vec<AugmentedPair>,
    pub warnings: Vec<String>,
    /// The paraphraser stopped producing candidates before balance.
    pub exhausted: bool,
}

impl AugmentOutcome {
    pub fn generated(&self) -> usize {
        self.items
            .iter()
            .filter(|p| p.provenance != Provenance::Original)
            .count()
    }
}

/// Paraphrases minority-class texts until both classes have equal counts.
///
/// Minority items are visited round-robin in a seeded order. A failing
/// paraphraser call falls back to word dropout and is recorded as a warning;
/// a full round without any candidate marks the client as exhausted.
pub fn augment_minority(
    pairs: &[(String, u8)],
    value_index: usize,
    paraphraser: &dyn ParaphraseClient,
    decode: &DecodeParams,
    seed: u64,
) -> Result<AugmentOutcome, CorpusError> {
    let mut items: Vec<AugmentedPair> = pairs
        .iter()
        .map(|(text, label)| AugmentedPair {
            text: text.clone(),
            label: *label,
            provenance: Provenance::Original,
        })
        .collect();
    let positives = pairs.iter().filter(|(_, l)| *l == 1).count();
    let negatives = pairs.len() - positives;
    if positives == negatives {
        return Ok(AugmentOutcome {
            items,
            warnings: Vec::new(),
            exhausted: false,
        });
    }
    let minority_label = u8::from(positives < negatives);
    let mut minority: Vec<usize> = (0..pairs.len()).filter(|&i| pairs[i].1 == minority_label).collect();
    if minority.is_empty() {
        return Err(CorpusError::EmptyMinority);
    }
    let mut deficit = positives.abs_diff(negatives);
    minority.shuffle(&mut seed::rng(seed, "augment-order", value_index as u64));

    let mut warnings = Vec::new();
    let mut exhausted = false;
    let mut round = 0u64;
    'rounds: while deficit > 0 {
        let mut produced = 0;
        for &src in &minority {
            if deficit == 0 {
                break 'rounds;
            }
            let request_seed = seed::derive(seed, &format!("augment-{value_index}-{round}"), src as u64);
            let request = ParaphraseRequest {
                text: pairs[src].0.clone(),
                n_candidates: 1,
                seed: request_seed,
                decode: decode.clone(),
            };
            let (text, generator) = match paraphraser.paraphrase(&request) {
                Ok(resp) => match resp.paraphrases.into_iter().find(|p| !p.trim().is_empty()) {
                    Some(p) => (p, Generator::Client),
                    None => continue,
                },
                Err(e) => {
                    let msg = format!(
                        "paraphraser {} failed on item {src}: {e}; using word dropout",
                        paraphraser.name()
                    );
                    log::warn!("{msg}");
                    warnings.push(msg);
                    (word_dropout(&request.text, request_seed, DEFAULT_DROPOUT_RATE), Generator::Fallback)
                }
            };
            items.push(AugmentedPair {
                text,
                label: minority_label,
                provenance: Provenance::Paraphrase { source: src, generator },
            });
            produced += 1;
            deficit -= 1;
        }
        if produced == 0 {
            exhausted = true;
            warnings.push(format!(
                "paraphraser {} exhausted with {deficit} items still missing",
                paraphraser.name()
            ));
            break;
        }
        round += 1;
    }
    Ok(AugmentOutcome {
        items,
        warnings,
        exhausted,
    })
}
