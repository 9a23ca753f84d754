//! Acceptance gate. Each test prints one `P<n> PASS|FAIL` line to stderr;
//! run with `cargo test -p subjlab --test acceptance -- --nocapture`.
//! Dataset checks D1-D3 print SKIP unless `SUBJLAB_DATASET` points to the
//! annotation table.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;

use ndarray::{array, Array2, Array3, ArrayView1};
use rand::Rng;
use serde_json::Value;
use subjlab_core::corpus::{derive_subjectivity, load_corpus, make_splits, word_dropout, SplitOptions};
use subjlab_core::direct::{
    bce_loss, bce_with_grad, combined_loss, normalize, sample_triplets, sigmoid, tension_loss, tension_with_grad,
    triplet_loss, triplet_with_grad,
};
use subjlab_core::encoder::load_checkpoint;
use subjlab_core::evaluation::{
    aggregate_runs, prf1, random_baseline, spearman_rho, write_table_csv, Manifest, MetricsReport,
};
use subjlab_core::infer::infer_subjectivity_from_predictions;
use subjlab_core::{seed, DsModel};

const LOSS_TOL: f64 = 1e-6;
const IDENTITY_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-4;
const GRAD_CASES: u64 = 50;
const METRIC_TOL: f64 = 1e-12;
const METRIC_CASES: u64 = 200;
const BASELINE_PER_SEED: f64 = 0.02;
const BASELINE_MEAN: f64 = 0.01;
const DS_F1_MIN: f64 = 0.95;
const IS_F1_MIN: f64 = 0.8;
const SEEDS: [u64; 3] = [0, 1, 2];
const METHODS: [(&str, &str); 4] = [("ds", "simple"), ("ds", "sup"), ("ds", "unsup"), ("is", "each")];

fn verdict(id: &str, pass: bool, detail: String) {
    let word = if pass { "PASS" } else { "FAIL" };
    eprintln!("{id} {word} {detail}");
    assert!(pass, "{id} failed: {detail}");
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_subjlab")
}

fn subjlab(dir: &Path, args: &[&str]) {
    let out = Command::new(bin())
        .args(args)
        .current_dir(dir)
        .env_remove("SUBJLAB_CACHE_DIR")
        .env("RUST_LOG", "warn")
        .output()
        .expect("run subjlab");
    assert!(
        out.status.success(),
        "subjlab {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Method overrides on top of the shipped synthetic configuration.
fn method_args(family: &str, variant: &str) -> Vec<String> {
    vec![
        "--set".into(),
        format!("method.family={family}"),
        "--set".into(),
        format!("method.variant={variant}"),
    ]
}

/// Generates the synthetic corpus and runs every method on three seeds,
/// entirely through the command-line interface.
fn full_run(dir: &Path) {
    if dir.exists() {
        std::fs::remove_dir_all(dir).unwrap();
    }
    std::fs::create_dir_all(dir).unwrap();
    let template = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/synthetic.json");
    let mut cfg: Value = serde_json::from_str(&std::fs::read_to_string(template).unwrap()).unwrap();
    cfg["data"]["input"] = "annotations.tsv".into();
    cfg["output_dir"] = "runs".into();
    cfg["split"]["seeds"] = Value::from(SEEDS.to_vec());
    std::fs::write(dir.join("config.json"), cfg.to_string()).unwrap();

    subjlab(dir, &["synth", "--output", "annotations.tsv"]);
    subjlab(dir, &["prepare", "--config", "config.json"]);
    for (family, variant) in METHODS {
        for cmd in ["train", "evaluate"] {
            let mut args: Vec<String> = vec![cmd.into(), "--config".into(), "config.json".into()];
            args.extend(method_args(family, variant));
            subjlab(dir, &args.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }
}

fn workspace() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join("run-a");
        full_run(&dir);
        dir
    })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display())))
        .unwrap()
}

fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt()).max(1e-300)
}

fn unit_rows<R: Rng>(rng: &mut R, n: usize, d: usize) -> Array2<f64> {
    let mut x = Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0f64..1.0));
    for mut row in x.rows_mut() {
        let norm = row.dot(&row).sqrt();
        row /= norm;
    }
    x
}

fn numeric_grad(x: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let h = 1e-6;
    let mut g = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let orig = probe[[i, j]];
            probe[[i, j]] = orig + h;
            let up = f(&probe);
            probe[[i, j]] = orig - h;
            let down = f(&probe);
            probe[[i, j]] = orig;
            g[[i, j]] = (up - down) / (2.0 * h);
        }
    }
    g
}

fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let norm = |m: &Array2<f64>| m.mapv(|x| x * x).sum().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-10 {
        norm(&(a - b))
    } else {
        norm(&(a - b)) / scale
    }
}

#[test]
fn p1_subjectivity_matches_brute_force() {
    let mut checked = 0;
    let mut mismatches = 0;
    for m in 2..=6usize {
        let n = 1usize << m;
        let cube = Array3::from_shape_fn((n, m, 1), |(i, j, _)| ((i >> j) & 1) as u8);
        let matrix = infer_subjectivity_from_predictions(&cube).unwrap();
        for i in 0..n {
            let bits: Vec<u8> = (0..m).map(|j| ((i >> j) & 1) as u8).collect();
            let brute = u8::from(bits.iter().any(|&b| b != bits[0]));
            let derived = derive_subjectivity(&bits).unwrap();
            if derived != brute || matrix[[i, 0]] != brute {
                mismatches += 1;
            }
            checked += 1;
        }
    }
    verdict("P1", mismatches == 0, format!("{checked} vectors, {mismatches} mismatches"));
}

#[test]
fn p2_loss_oracles() {
    let mut worst: f64 = 0.0;
    let mut check = |got: f64, want: f64| worst = worst.max((got - want).abs());
    let ln1pexp = |x: f64| (1.0 + x.exp()).ln();

    check(bce_loss(array![[0.0]].view(), array![[1.0]].view()), 2f64.ln());
    check(bce_loss(array![[50.0]].view(), array![[1.0]].view()).min(1e-9), 1e-9);
    check(
        bce_loss(array![[1.2], [-0.7]].view(), array![[1.0], [0.0]].view()),
        (ln1pexp(-1.2) + ln1pexp(-0.7)) / 2.0,
    );
    check(
        bce_loss(array![[1.2], [-0.7]].view(), array![[1.0], [0.0]].view()),
        (0.263_282_260_4 + 0.403_186_415_7) / 2.0,
    );

    let n = normalize(array![[3.0, 4.0]].view());
    check(n.z[[0, 0]], 0.6);
    check(n.z[[0, 1]], 0.8);

    let e1 = array![[1.0, 0.0]];
    let e2 = array![[0.0, 1.0]];
    check(triplet_loss(e1.view(), e1.view(), e2.view(), 1.0).unwrap(), 0.0);
    check(triplet_loss(e1.view(), e2.view(), e1.view(), 1.0).unwrap(), 2f64.sqrt() + 1.0);
    check(triplet_loss(e1.view(), e2.view(), e2.view(), 0.7).unwrap(), 0.7);

    let same = array![[0.3, 0.4], [0.3, 0.4]];
    check(tension_loss(same.view(), same.view(), 0.1).unwrap(), 2f64.ln());
    let orth = array![[1.0, 0.0], [0.0, 1.0]];
    let e = 1f64.exp();
    check(tension_loss(orth.view(), orth.view(), 1.0).unwrap(), -(e / (e + 1.0)).ln());
    check(tension_loss(orth.view(), orth.view(), 1.0).unwrap(), 0.313_261_687_5);
    let mut rng = seed::rng(2, "p2-scale", 0);
    let a = unit_rows(&mut rng, 6, 4);
    let p = unit_rows(&mut rng, 6, 4);
    check(
        tension_loss((&a * 3.7).view(), (&p * 0.2).view(), 0.1).unwrap(),
        tension_loss(a.view(), p.view(), 0.1).unwrap(),
    );

    check(sigmoid(3.0), 1.0 / (1.0 + (-3.0f64).exp()));
    check(combined_loss(0.5, 0.2, 1.0).total, 0.7);
    check(combined_loss(0.5, 0.2, 0.0).total, 0.5);
    check(combined_loss(0.4, 0.1, 5.0).total, 0.9);

    let mut identity: f64 = 0.0;
    let mut rng = seed::rng(2, "p2-identity", 0);
    for _ in 0..1000 {
        let (bce, cl, lambda) = (
            rng.random_range(0.0..10.0),
            rng.random_range(0.0..10.0),
            rng.random_range(0.0..10.0),
        );
        let l = combined_loss(bce, cl, lambda);
        identity = identity.max((l.total - (bce + lambda * cl)).abs());
    }
    verdict(
        "P2",
        worst <= LOSS_TOL && identity <= IDENTITY_TOL,
        format!("max oracle error {worst:.2e} (tol {LOSS_TOL:e}), identity error {identity:.2e} over 1000 triples (tol {IDENTITY_TOL:e})"),
    );
}

#[test]
fn p3_gradient_checks() {
    let mut worst = [0.0f64; 3];

    for case in 0..GRAD_CASES {
        let mut rng = seed::rng(3, "p3-bce", case);
        let logits = unit_rows(&mut rng, 8, 1) * rng.random_range(0.5..4.0);
        let labels = Array2::from_shape_simple_fn((8, 1), || f64::from(u8::from(rng.random_bool(0.5))));
        let (_, g) = bce_with_grad(logits.view(), labels.view());
        let num = numeric_grad(&logits, |x| bce_loss(x.view(), labels.view()));
        worst[0] = worst[0].max(rel_err(&g, &num));
    }

    let labels = [1u8, 1, 1, 0, 0, 0, 1, 0];
    let (mut done, mut attempt) = (0, 0);
    while done < GRAD_CASES {
        attempt += 1;
        let mut rng = seed::rng(3, "p3-triplet", attempt);
        let z = unit_rows(&mut rng, labels.len(), 6);
        let t = sample_triplets(&labels, attempt);
        let d = |a: usize, b: usize| (&z.row(a) - &z.row(b)).mapv(|x| x * x).sum().sqrt();
        let away_from_kink = (0..t.len()).all(|k| {
            let (a, p, n) = (t.anchor_idx[k], t.positive_idx[k], t.negative_idx[k]);
            (d(a, p) - d(a, n) + 1.0).abs() > 1e-3 && d(a, p) > 1e-3 && d(a, n) > 1e-3
        });
        if !away_from_kink {
            continue;
        }
        let (_, g) = triplet_with_grad(z.view(), &t, 1.0);
        let num = numeric_grad(&z, |x| triplet_with_grad(x.view(), &t, 1.0).0);
        worst[1] = worst[1].max(rel_err(&g, &num));
        done += 1;
    }

    for case in 0..GRAD_CASES {
        let mut rng = seed::rng(3, "p3-tension", case);
        let a = unit_rows(&mut rng, 6, 5);
        let p = unit_rows(&mut rng, 6, 5);
        let tau = [0.1, 0.3, 1.0][case as usize % 3];
        let (_, ga, gp) = tension_with_grad(a.view(), p.view(), tau).unwrap();
        let na = numeric_grad(&a, |x| tension_loss(x.view(), p.view(), tau).unwrap());
        let np = numeric_grad(&p, |x| tension_loss(a.view(), x.view(), tau).unwrap());
        worst[2] = worst[2].max(rel_err(&ga, &na)).max(rel_err(&gp, &np));
    }
    verdict(
        "P3",
        worst.iter().all(|&w| w <= GRAD_TOL),
        format!(
            "max relative error bce {:.2e}, triplet {:.2e}, tension {:.2e} over {GRAD_CASES} cases each (tol {GRAD_TOL:e})",
            worst[0], worst[1], worst[2]
        ),
    );
}

fn brute_f1(pred: &[u8], gold: &[u8]) -> (f64, f64, f64) {
    let count = |p: u8, g: u8| pred.iter().zip(gold).filter(|&(&a, &b)| a == p && b == g).count() as f64;
    let (tp, fp, fn_) = (count(1, 1), count(1, 0), count(0, 1));
    let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let recall = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// Spearman from mid-ranks by pairwise counting and the Pearson formula.
fn brute_spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|&a| {
                let less = v.iter().filter(|&&b| b < a).count() as f64;
                let equal = v.iter().filter(|&&b| b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (rank(x), rank(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        None
    } else {
        Some(cov / (vx * vy).sqrt())
    }
}

#[test]
fn p4_metric_oracles() {
    let mut prf_err: f64 = 0.0;
    let mut rho_err: f64 = 0.0;
    let mut undefined_agree = true;
    for case in 0..METRIC_CASES {
        let mut rng = seed::rng(4, "p4-prf", case);
        let n = rng.random_range(1..60);
        let pred: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        let gold: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.4))).collect();
        let m = prf1(&pred, &gold).unwrap();
        let (p, r, f) = brute_f1(&pred, &gold);
        prf_err = prf_err.max((m.precision - p).abs()).max((m.recall - r).abs()).max((m.f1 - f).abs());

        let mut rng = seed::rng(4, "p4-rho", case);
        let n = rng.random_range(2..25);
        let levels = rng.random_range(1..8);
        let x: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..levels))).collect();
        let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..6)) * 0.25).collect();
        match (spearman_rho(&x, &y).unwrap(), brute_spearman(&x, &y)) {
            (Some(a), Some(b)) => rho_err = rho_err.max((a - b).abs()),
            (None, None) => {}
            _ => undefined_agree = false,
        }
    }
    let tied = spearman_rho(&[1.0, 1.0, 2.0], &[2.0, 3.0, 1.0]).unwrap().unwrap();
    rho_err = rho_err.max((tied - brute_spearman(&[1.0, 1.0, 2.0], &[2.0, 3.0, 1.0]).unwrap()).abs());

    let gold: Vec<u8> = (0..10_000).map(|i| u8::from(i % 2 == 0)).collect();
    let names = vec!["balanced".to_string()];
    let mut per_seed = Vec::new();
    for s in 0..100 {
        let pred = random_baseline(&gold, s);
        let report = MetricsReport::from_predictions(
            &names,
            &[pred],
            std::slice::from_ref(&gold),
            &[None],
            Manifest::default(),
        )
        .unwrap();
        per_seed.push(report.macro_.f1);
    }
    let worst_seed = per_seed.iter().map(|f| (f - 0.5).abs()).fold(0.0, f64::max);
    let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    let pass = prf_err <= METRIC_TOL
        && rho_err <= METRIC_TOL
        && undefined_agree
        && worst_seed <= BASELINE_PER_SEED
        && (mean - 0.5).abs() <= BASELINE_MEAN;
    verdict(
        "P4",
        pass,
        format!(
            "prf1 error {prf_err:.1e}, rho error {rho_err:.1e} over {METRIC_CASES} cases (tol {METRIC_TOL:e}); \
             baseline macro F1 worst |f-0.5| {worst_seed:.4} (tol {BASELINE_PER_SEED}), mean {mean:.4} (tol {BASELINE_MEAN})"
        ),
    );
}

fn per_value_f1(report: &Value) -> Vec<f64> {
    report["per_value"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| m["f1"].as_f64().unwrap())
        .collect()
}

#[test]
fn p5_end_to_end_synthetic() {
    let runs = workspace().join("runs");
    let mut lines = Vec::new();
    let mut pass = true;
    for (family, variant) in METHODS {
        let min = if family == "ds" { DS_F1_MIN } else { IS_F1_MIN };
        for s in SEEDS {
            let report = read_json(&runs.join(format!("{family}-{variant}/seed-{s}/metrics.json")));
            let f1 = per_value_f1(&report);
            let low = f1.iter().copied().fold(f64::INFINITY, f64::min);
            pass &= f1.len() == 4 && low >= min;
            lines.push(format!("{family}-{variant}/seed-{s} min F1 {low:.4} (>= {min})"));
        }
    }
    verdict("P5", pass, lines.join("; "));
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Mean intra-class and inter-class cosine over all held-out pairs.
fn class_similarity(emb: &Array2<f64>, labels: &[bool]) -> (f64, f64) {
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    for i in 0..emb.nrows() {
        for j in i + 1..emb.nrows() {
            let c = cosine(emb.row(i), emb.row(j));
            if labels[i] == labels[j] {
                intra.push(c);
            } else {
                inter.push(c);
            }
        }
    }
    (mean(&intra), mean(&inter))
}

fn read_embeddings(path: &Path) -> (Array2<f64>, Vec<bool>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split('\t').collect();
    let dim = header.iter().filter(|h| h.starts_with('e')).count();
    for line in lines {
        let f: Vec<&str> = line.split('\t').collect();
        labels.push(f[1] == "subjective");
        rows.extend(f[2..2 + dim].iter().map(|x| x.parse::<f64>().unwrap()));
    }
    (Array2::from_shape_vec((labels.len(), dim), rows).unwrap(), labels)
}

#[test]
fn p6_embedding_geometry() {
    let dir = workspace();
    let (mut intra, mut inter) = (Vec::new(), Vec::new());
    let (mut para, mut random) = (Vec::new(), Vec::new());
    let (corpus, _) = load_corpus(dir.join("runs/data/corpus.json")).unwrap();
    for s in SEEDS {
        for v in 0..4 {
            let out = format!("emb-sup-{s}-{v}.tsv");
            let mut args = vec!["export-embeddings", "--config", "config.json", "--seed"];
            let seed_arg = s.to_string();
            let value_arg = v.to_string();
            args.extend([seed_arg.as_str(), "--value", value_arg.as_str(), "--output", out.as_str()]);
            subjlab(dir, &args);
            let (emb, labels) = read_embeddings(&dir.join(&out));
            let (a, b) = class_similarity(&emb, &labels);
            intra.push(a);
            inter.push(b);
        }

        let split = make_splits(&corpus, &SplitOptions::new(s)).unwrap();
        let index = corpus.id_index();
        let texts: Vec<String> = split.test_ids.iter().map(|id| corpus.texts()[index[id.as_str()]].clone()).collect();
        let paraphrases: Vec<String> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| word_dropout(t, seed::derive(s, "p6-paraphrase", i as u64), 0.15))
            .collect();
        let mut rng = seed::rng(s, "p6-random-pairs", 0);
        let shift = rng.random_range(1..texts.len());
        for v in 0..4 {
            let path = dir.join(format!("runs/ds-unsup/seed-{s}/ds-value-{v}.json"));
            let (_, model): (_, DsModel) = load_checkpoint(&path, "ds-model").unwrap();
            let e = model.embed(&texts).unwrap();
            let ep = model.embed(&paraphrases).unwrap();
            let n = texts.len();
            para.push(mean(&(0..n).map(|i| cosine(e.row(i), ep.row(i))).collect::<Vec<_>>()));
            random.push(mean(&(0..n).map(|i| cosine(e.row(i), e.row((i + shift) % n))).collect::<Vec<_>>()));
        }
    }
    let (intra, inter, para, random) = (mean(&intra), mean(&inter), mean(&para), mean(&random));
    verdict(
        "P6",
        intra > inter && para > random,
        format!(
            "DS-sup held-out cosine intra {intra:.4} > inter {inter:.4}; \
             DS-unsup paraphrase pairs {para:.4} > random pairs {random:.4} (mean over seeds {SEEDS:?}, 4 values)"
        ),
    );
}

#[test]
fn p7_determinism() {
    let a = workspace();
    let b = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join("run-b");
    full_run(&b);
    let mut compared = 0;
    let mut differing = Vec::new();
    for (family, variant) in METHODS {
        let mut files = vec![format!("runs/{family}-{variant}/metrics.json")];
        files.extend(SEEDS.iter().map(|s| format!("runs/{family}-{variant}/seed-{s}/metrics.json")));
        for f in files {
            let (x, y) = (std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap());
            if x != y {
                differing.push(f);
            }
            compared += 1;
        }
    }
    verdict(
        "P7",
        differing.is_empty(),
        format!("{compared} metrics.json files from two full CLI runs, differing: {differing:?}"),
    );
}

#[test]
fn p8_split_contract_and_aggregation() {
    let records = subjlab_core::synthetic::generate(&Default::default());
    let annotators = subjlab_core::corpus::select_annotators(&records, 4).unwrap();
    let values = subjlab_core::corpus::select_values(&records, &annotators, 4, None).unwrap();
    let corpus = subjlab_core::corpus::build_corpus(&records, &annotators, &values).unwrap();
    let splits: Vec<_> = (0..5).map(|s| make_splits(&corpus, &SplitOptions::new(s)).unwrap()).collect();
    let test_sets: Vec<Vec<String>> = splits
        .iter()
        .map(|s| {
            let mut ids = s.test_ids.clone();
            ids.sort();
            ids
        })
        .collect();
    let fixed = test_sets.windows(2).all(|w| w[0] == w[1]);
    let varied = splits.windows(2).all(|w| w[0].train_ids != w[1].train_ids);

    let gold = vec![1u8, 1, 0, 0];
    let names = vec!["v".to_string()];
    let runs: Vec<MetricsReport> = [[1u8, 1, 0, 0], [1, 0, 0, 0], [1, 1, 1, 1]]
        .iter()
        .enumerate()
        .map(|(s, p)| {
            let manifest = Manifest {
                family: "ds".into(),
                variant: "sup".into(),
                seeds: vec![s as u64],
                ..Default::default()
            };
            MetricsReport::from_predictions(&names, &[p.to_vec()], std::slice::from_ref(&gold), &[None], manifest)
                .unwrap()
        })
        .collect();
    let agg = aggregate_runs(&runs).unwrap();
    let d = agg.dispersion.as_ref().unwrap();
    // Hand values: P = {1, 1, 1/2}, R = {1, 1/2, 1}, F1 = {1, 2/3, 2/3}.
    let hand = [
        (agg.per_value[0].precision, 5.0 / 6.0),
        (d.per_value[0].precision, (1.0f64 / 12.0).sqrt()),
        (agg.per_value[0].recall, 5.0 / 6.0),
        (d.per_value[0].recall, (1.0f64 / 12.0).sqrt()),
        (agg.per_value[0].f1, 7.0 / 9.0),
        (d.per_value[0].f1, 3f64.sqrt() / 9.0),
    ];
    let agg_err = hand.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mut csv = Vec::new();
    write_table_csv(&[("ds-sup".into(), agg.clone())], &mut csv).unwrap();
    let csv = String::from_utf8(csv).unwrap();
    let cells = csv.contains("0.7778±0.1925") && csv.contains("0.8333±0.2887");

    let mut by_seed: HashMap<u64, usize> = HashMap::new();
    for s in &splits {
        by_seed.insert(s.seed, s.train_ids.len() + s.val_ids.len() + s.test_ids.len());
    }
    let sizes = by_seed.values().all(|&n| n == corpus.len());
    verdict(
        "P8",
        fixed && varied && sizes && agg_err <= 1e-12 && cells,
        format!(
            "5 seeds share one test set: {fixed}; train sets differ: {varied}; \
             n-1 mean±std error {agg_err:.1e}; table cells 0.7778±0.1925 and 0.8333±0.2887 present: {cells}"
        ),
    );
}

fn dataset() -> Option<PathBuf> {
    std::env::var_os("SUBJLAB_DATASET").map(PathBuf::from).filter(|p| p.exists())
}

fn skip(id: &str, why: &str) {
    eprintln!("{id} SKIP {why}");
}

/// Runs `prepare` with default settings on the real dataset.
fn dataset_report() -> Option<Value> {
    static REPORT: OnceLock<Option<Value>> = OnceLock::new();
    REPORT
        .get_or_init(|| {
            let data = dataset()?;
            let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join("dataset");
            std::fs::create_dir_all(&dir).unwrap();
            let input = format!("data.input={}", data.display());
            subjlab(&dir, &["prepare", "--set", &input, "--set", "output_dir=runs"]);
            Some(read_json(&dir.join("runs/data/data_report.json")))
        })
        .clone()
}

fn value_entry<'a>(report: &'a Value, name: &str) -> Option<&'a Value> {
    report["values"].as_array()?.iter().find(|v| v["name"] == name)
}

#[test]
fn d1_counts_and_ratios() {
    let Some(report) = dataset_report() else {
        return skip("D1", "SUBJLAB_DATASET not set");
    };
    let ach = value_entry(&report, "Achievement").expect("Achievement selected");
    let counts = (ach["subjective"].as_u64().unwrap(), ach["non_subjective"].as_u64().unwrap());
    let ratio = ach["ratio"].as_f64().unwrap();
    let totals: Vec<u64> = report["values"].as_array().unwrap().iter().map(|v| v["total"].as_u64().unwrap()).collect();
    let constant = totals.windows(2).all(|w| w[0] == w[1]);
    verdict(
        "D1",
        counts == (743, 2038) && (ratio - 0.364).abs() <= 0.001 && constant,
        format!("Achievement S/NS {counts:?}, ratio {ratio:.4}, totals {totals:?}"),
    );
}

#[test]
fn d2_agreement_bands() {
    let Some(report) = dataset_report() else {
        return skip("D2", "SUBJLAB_DATASET not set");
    };
    let entry = value_entry(&report, "Benevolence: dependability").expect("value selected");
    let kappa = entry["fleiss_kappa"].as_f64().unwrap();
    let band = entry["agreement"].as_str().unwrap().to_string();
    verdict(
        "D2",
        kappa > 0.61 && band == "substantial",
        format!("Benevolence: dependability kappa {kappa:.4}, band {band}"),
    );
}

#[test]
fn d3_directional_ordering() {
    let (Some(data), Ok(model)) = (dataset(), std::env::var("SUBJLAB_ENCODER_MODEL")) else {
        return skip("D3", "needs SUBJLAB_DATASET and SUBJLAB_ENCODER_MODEL");
    };
    let dim = std::env::var("SUBJLAB_ENCODER_DIM").unwrap_or_else(|_| "768".into());
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join("pretrained");
    std::fs::create_dir_all(&dir).unwrap();
    let worker = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scripts/hf_encoder_worker.py");
    let external = serde_json::json!({"command": ["python3", worker], "model_id": model});
    let sets = [
        format!("data.input={}", data.display()),
        "output_dir=runs".into(),
        "split.seeds=[0]".into(),
        "encoder.backend_id=external".into(),
        format!("encoder.embedding_dim={dim}"),
        "encoder.trainable=false".into(),
        format!("encoder.external={external}"),
        "train.learning_rate=0.001".into(),
        "train.epochs=3".into(),
    ];
    let run = |family: &str, variant: &str, cmd: &str| {
        let mut args: Vec<String> = vec![cmd.into()];
        for s in &sets {
            args.extend(["--set".into(), s.clone()]);
        }
        args.extend(method_args(family, variant));
        subjlab(&dir, &args.iter().map(String::as_str).collect::<Vec<_>>());
    };
    run("ds", "simple", "prepare");
    let mut macro_f1 = HashMap::new();
    for (family, variant) in [("ds", "simple"), ("is", "each")] {
        run(family, variant, "train");
        run(family, variant, "evaluate");
        let report = read_json(&dir.join(format!("runs/{family}-{variant}/metrics.json")));
        macro_f1.insert(family, report["macro"]["f1"].as_f64().unwrap());
    }
    let table = std::fs::read_to_string(dir.join("runs/ds-simple/table.csv")).unwrap();
    run("ds", "simple", "baseline");
    let random = read_json(&dir.join("runs/baseline/metrics.json"))["macro"]["f1"].as_f64().unwrap();
    let (ds, is) = (macro_f1["ds"], macro_f1["is"]);
    verdict(
        "D3",
        ds >= random + 0.05 && is < ds,
        format!("DS-simple macro F1 {ds:.4}, random {random:.4}, IS-each {is:.4}\n{table}"),
    );
}
