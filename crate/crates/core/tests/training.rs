use ndarray::Array2;
use subjlab_core::corpus::{build_corpus, make_splits, select_annotators, select_values, SplitOptions, SplitPart};
use subjlab_core::direct::{predict_ds, sigmoid, train_ds, DsLoss, DsOptions, DsVariant};
use subjlab_core::encoder::{run_epochs, Batch, EncoderConfig, HeadKind, ModelState, OptimizerKind, ToyEncoder, TrainConfig};
use subjlab_core::evaluation::prf1;
use subjlab_core::infer::{predict_subjectivity, train_is, IsOptions, IsVariant};
use subjlab_core::synthetic::{generate, SyntheticConfig};
use subjlab_core::Corpus;

fn small_corpus(n: usize) -> Corpus {
    let records = generate(&SyntheticConfig {
        n_arguments: n,
        ..Default::default()
    });
    let annotators = select_annotators(&records, 4).unwrap();
    let values = select_values(&records, &annotators, 4, None).unwrap();
    build_corpus(&records, &annotators, &values).unwrap()
}

fn sgd(lr: f64, epochs: usize, batch_size: usize) -> TrainConfig {
    TrainConfig {
        optimizer: OptimizerKind::Sgd,
        learning_rate: lr,
        epochs,
        batch_size,
        ..Default::default()
    }
}

/// A frozen 1-d encoder with a binary head is scalar logistic regression.
#[test]
fn one_dimensional_logistic_matches_scalar_oracle() {
    let enc = EncoderConfig {
        embedding_dim: 1,
        trainable: false,
        dropout: 0.0,
        ..Default::default()
    };
    let train = TrainConfig {
        lambda_cl: 0.0,
        ..sgd(0.5, 200, 2)
    };
    let texts = ["a".to_string(), "b".to_string()];
    let labels = [1.0, 0.0];
    let toy = ToyEncoder::new(&enc);
    let xs = [toy.base_vector("a")[0], toy.base_vector("b")[0]];

    let mut state = ModelState::new(&enc, &[HeadKind::Binary], 3).unwrap();
    let (mut w, mut b) = (state.heads[0].weight[[0, 0]], state.heads[0].bias[0]);
    let mut loss = DsLoss::new(DsVariant::Simple, &train);
    let mut make_batch = |idx: &[usize], _: usize| Batch {
        ids: idx.iter().map(|i| i.to_string()).collect(),
        texts: idx.iter().map(|&i| texts[i].clone()).collect(),
        alt_texts: None,
        targets: vec![Array2::from_shape_fn((idx.len(), 1), |(r, _)| labels[idx[r]])],
    };
    let history = run_epochs(&mut state, 2, &train, &mut loss, &mut make_batch).unwrap();
    assert_eq!(history.len(), 200);

    let mut oracle = Vec::new();
    for _ in 0..200 {
        let (mut l, mut gw, mut gb) = (0.0, 0.0, 0.0);
        for (x, y) in xs.iter().zip(labels) {
            let z = w * x + b;
            let p = sigmoid(z);
            l += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            gw += (p - y) * x;
            gb += p - y;
        }
        oracle.push(l / 2.0);
        w -= 0.5 * gw / 2.0;
        b -= 0.5 * gb / 2.0;
    }
    for (step, (h, o)) in history.iter().zip(&oracle).enumerate() {
        assert!((h.bce - o).abs() < 1e-9, "step {step}: {} vs oracle {o}", h.bce);
    }
    let windows: Vec<f64> = history.chunks(20).map(|c| c.iter().map(|e| e.bce).sum::<f64>() / 20.0).collect();
    assert!(windows.windows(2).all(|p| p[1] < p[0]), "{windows:?}");
}

#[test]
fn sup_with_zero_lambda_follows_simple() {
    let corpus = small_corpus(80);
    let split = make_splits(&corpus, &SplitOptions::new(0)).unwrap();
    let enc = EncoderConfig {
        embedding_dim: 16,
        ..Default::default()
    };
    let train = TrainConfig {
        lambda_cl: 0.0,
        ..sgd(1.0, 3, 16)
    };
    let simple = train_ds(&corpus, &split, 1, DsVariant::Simple, &enc, &train, &DsOptions::default()).unwrap();
    let sup = train_ds(&corpus, &split, 1, DsVariant::Sup, &enc, &train, &DsOptions::default()).unwrap();
    assert_eq!(simple.state, sup.state);
    let bce = |m: &subjlab_core::DsModel| m.history.iter().map(|e| e.bce).collect::<Vec<_>>();
    assert_eq!(bce(&simple), bce(&sup));
}

#[test]
fn ds_and_is_run_end_to_end() {
    let corpus = small_corpus(160);
    let split = make_splits(&corpus, &SplitOptions::new(1)).unwrap();
    let enc = EncoderConfig {
        embedding_dim: 32,
        ..Default::default()
    };
    let test_rows: Vec<usize> = split.test_ids.iter().map(|id| corpus.index_of(id).unwrap()).collect();
    let texts: Vec<String> = test_rows.iter().map(|&i| corpus.texts()[i].clone()).collect();
    for variant in DsVariant::ALL {
        let defaults = variant.default_train_config();
        let train = TrainConfig {
            seed: 5,
            lambda_cl: defaults.lambda_cl,
            ..sgd(5.0, 15, defaults.batch_size)
        };
        let model = train_ds(&corpus, &split, 0, variant, &enc, &train, &DsOptions::default()).unwrap();
        assert_eq!(model.history.len(), 15);
        let pred = predict_ds(&model, &texts, 0.5).unwrap();
        assert_eq!(pred.labels.len(), texts.len());
        let again = train_ds(&corpus, &split, 0, variant, &enc, &train, &DsOptions::default()).unwrap();
        assert_eq!(model, again, "{variant} is not deterministic");
    }

    let train = sgd(5.0, 15, 16);
    let bundle = train_is(&corpus, &split, IsVariant::Each, &enc, &train, &IsOptions::default()).unwrap();
    assert_eq!(bundle.states.len(), 4);
    let pred = predict_subjectivity(&bundle, &texts).unwrap();
    assert_eq!(pred.dim(), (texts.len(), 4));
    let gold: Vec<u8> = test_rows.iter().map(|&i| corpus.subjectivity()[[i, 0]]).collect();
    let p: Vec<u8> = (0..texts.len()).map(|r| pred[[r, 0]]).collect();
    assert!(prf1(&p, &gold).unwrap().f1.is_finite());
    assert!(bundle.history.iter().flatten().all(|e| e.total.is_finite()));
    assert_eq!(split.ids(SplitPart::Test).len(), texts.len());
}
