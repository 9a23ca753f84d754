use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};
use subjlab_core::corpus::{subjectivity_ratio, SplitSpec};
use subjlab_core::direct::predict_ds;
use subjlab_core::evaluation::{
    aggregate_runs, prf1, random_baseline, write_metrics_csv, write_table_csv, Manifest, MetricsReport,
    LABEL_CONVENTION,
};
use subjlab_core::infer::{predict_annotator_labels, predict_subjectivity};
use subjlab_core::{seed, Corpus};

use crate::config::ExperimentConfig;
use crate::prepare::load_prepared;
use crate::train::{load_seed, selected_values, split_for, Trained};
use crate::{create_tagged, method_dir, seed_dir, write_json};

/// Test rows, texts and per-value gold labels of one split.
struct TestSet {
    rows: Vec<usize>,
    texts: Vec<String>,
    gold: Vec<Vec<u8>>,
}

fn test_set(corpus: &Corpus, split: &SplitSpec, values: &[usize]) -> Result<TestSet> {
    let index = corpus.id_index();
    let rows: Vec<usize> = split
        .test_ids
        .iter()
        .map(|id| index.get(id.as_str()).copied().with_context(|| format!("unknown test id {id}")))
        .collect::<Result<_>>()?;
    let texts = rows.iter().map(|&i| corpus.texts()[i].clone()).collect();
    let gold = values
        .iter()
        .map(|&v| rows.iter().map(|&i| corpus.subjectivity()[[i, v]]).collect())
        .collect();
    Ok(TestSet { rows, texts, gold })
}

fn ratios(corpus: &Corpus, values: &[usize]) -> Vec<Option<f64>> {
    values.iter().map(|&v| subjectivity_ratio(corpus, v).ok()).collect()
}

fn manifest(family: &str, variant: &str, seed: u64, hash: &str, notes: Map<String, Value>) -> Manifest {
    Manifest {
        family: family.into(),
        variant: variant.into(),
        seeds: vec![seed],
        config_hash: hash.into(),
        split_part: "test".into(),
        label_convention: LABEL_CONVENTION.into(),
        notes,
    }
}

/// Macro F1 of each annotator's predicted value labels, for diagnostics.
fn annotator_scores(corpus: &Corpus, test: &TestSet, pred: &ndarray::Array3<u8>, values: &[usize]) -> Result<Value> {
    let ann = corpus.annotations();
    let mut out = Map::new();
    for (j, aid) in corpus.annotator_ids().iter().enumerate() {
        let mut sum = 0.0;
        for &v in values {
            let p: Vec<u8> = (0..test.rows.len()).map(|r| pred[[r, j, v]]).collect();
            let g: Vec<u8> = test.rows.iter().map(|&i| ann[[i, j, v]]).collect();
            sum += prf1(&p, &g)?.f1;
        }
        out.insert(aid.clone(), json!(sum / values.len().max(1) as f64));
    }
    Ok(Value::Object(out))
}

/// Writes the aggregate, the per-run CSV and a table with `extra` rows
/// below the aggregate.
fn write_reports(
    dir: &Path,
    label: &str,
    hash: &str,
    reports: &[MetricsReport],
    extra: Vec<(String, MetricsReport)>,
) -> Result<MetricsReport> {
    let agg = aggregate_runs(reports)?;
    write_json(&dir.join("metrics.json"), &agg)?;
    let file = std::fs::File::create(dir.join("metrics.csv"))?;
    write_metrics_csv(reports, std::io::BufWriter::new(file))?;
    let mut rows = vec![(label.to_string(), agg.clone())];
    rows.extend(extra);
    write_table_csv(&rows, create_tagged(&dir.join("table.csv"), hash)?)?;
    Ok(agg)
}

/// Scores every configured seed on its test part and aggregates them.
pub fn run(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let corpus = load_prepared(cfg)?;
    let method = cfg.method()?;
    let values = selected_values(cfg, &corpus)?;
    let names: Vec<String> = values.iter().map(|&v| corpus.value_selection().names()[v].clone()).collect();
    let hash = cfg.hash();
    let ratios = ratios(&corpus, &values);

    let mut reports = Vec::new();
    let mut baselines = Vec::new();
    for &s in &cfg.split.seeds {
        let (run_manifest, trained) = load_seed(cfg, s)?;
        let split = split_for(cfg, &corpus, s)?;
        let test = test_set(&corpus, &split, &values)?;
        let mut notes = run_manifest.decisions.clone();
        let preds: Vec<Vec<u8>> = match &trained {
            Trained::Ds(models) => values
                .iter()
                .map(|&v| {
                    let model = models
                        .iter()
                        .find(|m| m.value_index == v)
                        .with_context(|| format!("seed {s}: no checkpoint for value {}", corpus.value_selection().names()[v]))?;
                    Ok(predict_ds(model, &test.texts, model.threshold)?.labels)
                })
                .collect::<Result<_>>()?,
            Trained::Is(bundle) => {
                let subj = predict_subjectivity(bundle, &test.texts)?;
                let per_annotator = predict_annotator_labels(bundle, &test.texts)?;
                notes.insert(
                    "annotator_macro_f1".into(),
                    annotator_scores(&corpus, &test, &per_annotator, &values)?,
                );
                values.iter().map(|&v| subj.column(v).to_vec()).collect()
            }
        };
        let report = MetricsReport::from_predictions(
            &names,
            &preds,
            &test.gold,
            &ratios,
            manifest(&method.family().to_string(), method.variant(), s, &hash, notes),
        )?;
        write_json(&seed_dir(cfg, s)?.join("metrics.json"), &report)?;
        reports.push(report);
        baselines.push(baseline_report(&names, &test, &ratios, s, &hash)?);
    }

    let base = aggregate_runs(&baselines)?;
    let agg = write_reports(&method_dir(cfg)?, &method.slug(), &hash, &reports, vec![("random".into(), base)])?;
    log::info!("{}: macro F1 {:.4} over {} runs", method.slug(), agg.macro_.f1, agg.runs);
    Ok(agg)
}

fn baseline_report(
    names: &[String],
    test: &TestSet,
    ratios: &[Option<f64>],
    run_seed: u64,
    hash: &str,
) -> Result<MetricsReport> {
    let preds: Vec<Vec<u8>> = test
        .gold
        .iter()
        .enumerate()
        .map(|(v, g)| random_baseline(g, seed::derive(run_seed, "baseline", v as u64)))
        .collect();
    Ok(MetricsReport::from_predictions(
        names,
        &preds,
        &test.gold,
        ratios,
        manifest("baseline", "random", run_seed, hash, Map::new()),
    )?)
}

/// Fair-coin predictions on the test part of every configured seed.
pub fn baseline(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let corpus = load_prepared(cfg)?;
    let values = selected_values(cfg, &corpus)?;
    let names: Vec<String> = values.iter().map(|&v| corpus.value_selection().names()[v].clone()).collect();
    let hash = cfg.hash();
    let ratios = ratios(&corpus, &values);
    let mut reports = Vec::new();
    for &s in &cfg.split.seeds {
        let split = split_for(cfg, &corpus, s)?;
        reports.push(baseline_report(&names, &test_set(&corpus, &split, &values)?, &ratios, s, &hash)?);
    }
    let agg = write_reports(&cfg.output_dir.join("baseline"), "random", &hash, &reports, Vec::new())?;
    log::info!("random baseline: macro F1 {:.4} over {} runs", agg.macro_.f1, agg.runs);
    Ok(agg)
}
