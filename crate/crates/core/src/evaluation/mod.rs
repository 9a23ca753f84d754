//! Precision/recall/F1, macro averages, rank correlation, the random
//! baseline and multi-run aggregation.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least {0} items")]
    TooFew(usize),
    #[error("reports disagree: {0}")]
    Heterogeneous(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Confusion counts and scores for the positive (subjective) class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// Some denominator was zero and the affected score was set to 0.
    pub degenerate: bool,
}

pub fn prf1(pred: &[u8], gold: &[u8]) -> Result<Prf1, EvalError> {
    if pred.len() != gold.len() {
        return Err(EvalError::Length(pred.len(), gold.len()));
    }
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gold) {
        match (p == 1, g == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let mut degenerate = p.is_none() || r.is_none();
    let (precision, recall) = (p.unwrap_or(0.0), r.unwrap_or(0.0));
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        degenerate = true;
        0.0
    };
    Ok(Prf1 {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<&Prf1> for Scores {
    fn from(m: &Prf1) -> Self {
        Self {
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        }
    }
}

/// Unweighted mean of each score over values.
pub fn macro_average(per_value: &[Scores]) -> Result<Scores, EvalError> {
    if per_value.is_empty() {
        return Err(EvalError::TooFew(1));
    }
    let n = per_value.len() as f64;
    Ok(Scores {
        precision: per_value.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: per_value.iter().map(|s| s.recall).sum::<f64>() / n,
        f1: per_value.iter().map(|s| s.f1).sum::<f64>() / n,
    })
}

/// 1-based ranks with ties sharing their mean rank.
pub fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && xs[order[end]] == xs[order[start]] {
            end += 1;
        }
        let mean = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = mean;
        }
        start = end;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Tie-corrected Spearman correlation. `None` when either side is constant.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, EvalError> {
    if xs.len() != ys.len() {
        return Err(EvalError::Length(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(EvalError::TooFew(2));
    }
    Ok(pearson(&mid_ranks(xs), &mid_ranks(ys)))
}

/// Fair-coin predictions, one per gold item.
pub fn random_baseline(gold: &[u8], seed: u64) -> Vec<u8> {
    let mut rng = seed::rng(seed, "random-baseline", 0);
    gold.iter().map(|_| u8::from(rng.random_bool(0.5))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueMetrics {
    pub value: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support_pos: usize,
    pub support_neg: usize,
    pub degenerate: bool,
    /// Subjective over non-subjective count on the whole corpus.
    pub subjectivity_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispersion {
    /// Sample standard deviation per value, same order as `per_value`.
    pub per_value: Vec<Scores>,
    #[serde(rename = "macro")]
    pub macro_: Scores,
    pub spearman_rho: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub family: String,
    pub variant: String,
    pub seeds: Vec<u64>,
    pub config_hash: String,
    pub split_part: String,
    /// How labels are encoded in predictions and gold.
    pub label_convention: String,
    /// Run settings worth surfacing next to the scores.
    pub notes: serde_json::Map<String, serde_json::Value>,
}

pub const LABEL_CONVENTION: &str = "positive class = subjective (annotators disagree)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_value: Vec<ValueMetrics>,
    #[serde(rename = "macro")]
    pub macro_: Scores,
    pub spearman_rho: Option<f64>,
    pub runs: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dispersion: Option<Dispersion>,
    pub manifest: Manifest,
}

impl MetricsReport {
    /// Builds a single-run report. `ratios[v]` feeds the rank correlation
    /// against per-value F1.
    pub fn from_predictions(
        value_names: &[String],
        predictions: &[Vec<u8>],
        gold: &[Vec<u8>],
        ratios: &[Option<f64>],
        manifest: Manifest,
    ) -> Result<Self, EvalError> {
        if predictions.len() != value_names.len() || gold.len() != value_names.len() {
            return Err(EvalError::Length(predictions.len(), value_names.len()));
        }
        let mut per_value = Vec::with_capacity(value_names.len());
        for (v, name) in value_names.iter().enumerate() {
            let m = prf1(&predictions[v], &gold[v])?;
            let pos = gold[v].iter().filter(|&&g| g == 1).count();
            per_value.push(ValueMetrics {
                value: name.clone(),
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                support_pos: pos,
                support_neg: gold[v].len() - pos,
                degenerate: m.degenerate,
                subjectivity_ratio: ratios.get(v).copied().flatten(),
            });
        }
        let scores: Vec<Scores> = per_value
            .iter()
            .map(|m| Scores {
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
            })
            .collect();
        let macro_ = macro_average(&scores)?;
        let spearman = correlation_with_ratio(&per_value)?;
        Ok(Self {
            per_value,
            macro_,
            spearman_rho: spearman,
            runs: 1,
            dispersion: None,
            manifest,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

fn correlation_with_ratio(per_value: &[ValueMetrics]) -> Result<Option<f64>, EvalError> {
    let pairs: Vec<(f64, f64)> = per_value
        .iter()
        .filter_map(|m| m.subjectivity_ratio.map(|r| (m.f1, r)))
        .collect();
    if pairs.len() < 2 {
        return Ok(None);
    }
    let (f1s, ratios): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    spearman_rho(&f1s, &ratios)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn agg_scores(items: &[Scores]) -> (Scores, Scores) {
    let col = |f: fn(&Scores) -> f64| mean_std(&items.iter().map(f).collect::<Vec<_>>());
    let (p, sp) = col(|s| s.precision);
    let (r, sr) = col(|s| s.recall);
    let (f, sf) = col(|s| s.f1);
    (
        Scores {
            precision: p,
            recall: r,
            f1: f,
        },
        Scores {
            precision: sp,
            recall: sr,
            f1: sf,
        },
    )
}

/// Mean and sample (n-1) standard deviation over runs of one method.
pub fn aggregate_runs(reports: &[MetricsReport]) -> Result<MetricsReport, EvalError> {
    let first = reports.first().ok_or(EvalError::TooFew(1))?;
    let names: Vec<&str> = first.per_value.iter().map(|m| m.value.as_str()).collect();
    for r in reports {
        let other: Vec<&str> = r.per_value.iter().map(|m| m.value.as_str()).collect();
        if other != names {
            return Err(EvalError::Heterogeneous(format!("value sets {names:?} vs {other:?}")));
        }
        if r.manifest.family != first.manifest.family || r.manifest.variant != first.manifest.variant {
            return Err(EvalError::Heterogeneous(format!(
                "{}-{} vs {}-{}",
                first.manifest.family, first.manifest.variant, r.manifest.family, r.manifest.variant
            )));
        }
    }
    let mut per_value = Vec::with_capacity(names.len());
    let mut per_value_std = Vec::with_capacity(names.len());
    for v in 0..names.len() {
        let items: Vec<Scores> = reports
            .iter()
            .map(|r| {
                let m = &r.per_value[v];
                Scores {
                    precision: m.precision,
                    recall: m.recall,
                    f1: m.f1,
                }
            })
            .collect();
        let (mean, std) = agg_scores(&items);
        let base = &first.per_value[v];
        per_value.push(ValueMetrics {
            value: base.value.clone(),
            precision: mean.precision,
            recall: mean.recall,
            f1: mean.f1,
            support_pos: base.support_pos,
            support_neg: base.support_neg,
            degenerate: reports.iter().any(|r| r.per_value[v].degenerate),
            subjectivity_ratio: base.subjectivity_ratio,
        });
        per_value_std.push(std);
    }
    let macros: Vec<Scores> = reports.iter().map(|r| r.macro_).collect();
    let (macro_, macro_std) = agg_scores(&macros);
    let rhos: Vec<f64> = reports.iter().filter_map(|r| r.spearman_rho).collect();
    let (rho, rho_std) = if rhos.is_empty() {
        (None, None)
    } else {
        let (m, s) = mean_std(&rhos);
        (Some(m), Some(s))
    };
    let mut manifest = first.manifest.clone();
    manifest.seeds = reports.iter().flat_map(|r| r.manifest.seeds.iter().copied()).collect();
    let runs: usize = reports.iter().map(|r| r.runs).sum();
    Ok(MetricsReport {
        per_value,
        macro_,
        spearman_rho: rho,
        runs,
        dispersion: (reports.len() > 1).then_some(Dispersion {
            per_value: per_value_std,
            macro_: macro_std,
            spearman_rho: rho_std,
        }),
        manifest,
    })
}

#[derive(Serialize)]
struct CsvRow<'a> {
    run: usize,
    seed: String,
    family: &'a str,
    variant: &'a str,
    config_hash: &'a str,
    value: &'a str,
    precision: f64,
    recall: f64,
    f1: f64,
    support_pos: usize,
    support_neg: usize,
    degenerate: bool,
}

/// One row per value per run.
pub fn write_metrics_csv<W: Write>(reports: &[MetricsReport], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    for (run, r) in reports.iter().enumerate() {
        let seed = r
            .manifest
            .seeds
            .iter()
            .map(u64::to_string)
            .collect::<Vec<_>>()
            .join(" ");
        for m in &r.per_value {
            w.serialize(CsvRow {
                run,
                seed: seed.clone(),
                family: &r.manifest.family,
                variant: &r.manifest.variant,
                config_hash: &r.manifest.config_hash,
                value: &m.value,
                precision: m.precision,
                recall: m.recall,
                f1: m.f1,
                support_pos: m.support_pos,
                support_neg: m.support_neg,
                degenerate: m.degenerate,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cell(mean: f64, std: Option<f64>) -> String {
    match std {
        Some(s) => format!("{mean:.4}±{s:.4}"),
        None => format!("{mean:.4}"),
    }
}

/// Methods as rows, values as P/R/F1 column groups, then the macro average
/// and rho. Aggregated reports print `mean±std`.
pub fn write_table_csv<W: Write>(rows: &[(String, MetricsReport)], out: W) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(out);
    let Some((_, first)) = rows.first() else {
        w.flush()?;
        return Ok(());
    };
    let mut header = vec!["method".to_string(), "runs".to_string()];
    for m in &first.per_value {
        for s in ["P", "R", "F1"] {
            header.push(format!("{} {s}", m.value));
        }
    }
    header.extend(["macro P", "macro R", "macro F1", "rho"].map(String::from));
    w.write_record(&header)?;
    for (name, r) in rows {
        let d = r.dispersion.as_ref();
        let mut rec = vec![name.clone(), r.runs.to_string()];
        for (v, m) in r.per_value.iter().enumerate() {
            let sd = d.map(|d| d.per_value[v]);
            rec.push(cell(m.precision, sd.map(|s| s.precision)));
            rec.push(cell(m.recall, sd.map(|s| s.recall)));
            rec.push(cell(m.f1, sd.map(|s| s.f1)));
        }
        rec.push(cell(r.macro_.precision, d.map(|d| d.macro_.precision)));
        rec.push(cell(r.macro_.recall, d.map(|d| d.macro_.recall)));
        rec.push(cell(r.macro_.f1, d.map(|d| d.macro_.f1)));
        rec.push(match r.spearman_rho {
            Some(rho) => cell(rho, d.and_then(|d| d.spearman_rho)),
            None => "undefined".into(),
        });
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
