use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError};

/// Fleiss' kappa from a table of per-item category counts.
///
/// Every row must sum to the same number of raters `m >= 2`. Returns `None`
/// when expected agreement is 1 (all ratings in one category), where kappa
/// is undefined.
pub fn fleiss_kappa_counts(counts: &[Vec<usize>]) -> Result<Option<f64>, CorpusError> {
    let first = counts
        .first()
        .ok_or_else(|| CorpusError::Invalid("Fleiss' kappa needs at least one item".into()))?;
    let raters: usize = first.iter().sum();
    if raters < 2 {
        return Err(CorpusError::TooFewAnnotators(raters));
    }
    let categories = first.len();
    if counts
        .iter()
        .any(|row| row.len() != categories || row.iter().sum::<usize>() != raters)
    {
        return Err(CorpusError::Invalid(
            "every item needs the same number of raters and categories".into(),
        ));
    }
    let n = counts.len() as f64;
    let m = raters as f64;

    let mut category_totals = vec![0.0; categories];
    let mut p_bar = 0.0;
    for row in counts {
        let mut sq = 0.0;
        for (t, &c) in category_totals.iter_mut().zip(row) {
            *t += c as f64;
            sq += (c * c) as f64;
        }
        p_bar += (sq - m) / (m * (m - 1.0));
    }
    p_bar /= n;
    let p_e: f64 = category_totals
        .iter()
        .map(|t| {
            let p = t / (n * m);
            p * p
        })
        .sum();
    if (1.0 - p_e).abs() < 1e-15 {
        return Ok(None);
    }
    Ok(Some((p_bar - p_e) / (1.0 - p_e)))
}

/// Fleiss' kappa of the selected annotators on one value (present/absent).
pub fn fleiss_kappa(corpus: &Corpus, value: usize) -> Result<Option<f64>, CorpusError> {
    corpus.check_value(value)?;
    let ann = corpus.annotations();
    let m = ann.dim().1;
    let counts: Vec<Vec<usize>> = (0..corpus.len())
        .map(|i| {
            let present = (0..m).filter(|&j| ann[[i, j, value]] == 1).count();
            vec![m - present, present]
        })
        .collect();
    fleiss_kappa_counts(&counts)
}

/// Landis and Koch interpretation bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgreementBand {
    Poor,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

pub fn agreement_band(kappa: f64) -> AgreementBand {
    match kappa {
        k if k < 0.0 => AgreementBand::Poor,
        k if k <= 0.20 => AgreementBand::Slight,
        k if k <= 0.40 => AgreementBand::Fair,
        k if k <= 0.60 => AgreementBand::Moderate,
        k if k <= 0.80 => AgreementBand::Substantial,
        _ => AgreementBand::AlmostPerfect,
    }
}
