use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError};
use crate::seed;

/// Train/test proportions; validation is carved out of the training share.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub test: f64,
    pub val_of_train: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.78,
            test: 0.22,
            val_of_train: 0.10,
        }
    }
}

impl SplitFractions {
    fn validate(&self) -> Result<(), CorpusError> {
        let open = |x: f64| x > 0.0 && x < 1.0;
        if !open(self.train) || !open(self.test) {
            return Err(CorpusError::InvalidSplit(format!(
                "train and test fractions must lie in (0, 1), got {} and {}",
                self.train, self.test
            )));
        }
        if (self.train + self.test - 1.0).abs() > 1e-9 {
            return Err(CorpusError::InvalidSplit(format!(
                "train + test must be 1, got {}",
                self.train + self.test
            )));
        }
        if !(0.0..1.0).contains(&self.val_of_train) {
            return Err(CorpusError::InvalidSplit(format!(
                "validation fraction must lie in [0, 1), got {}",
                self.val_of_train
            )));
        }
        Ok(())
    }

    /// `(train, val, test)` sizes for `n` items: nearest-integer rounding,
    /// remainder to train.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let test = ((n as f64) * self.test).round() as usize;
        let rest = n - test.min(n);
        let val = ((rest as f64) * self.val_of_train).round() as usize;
        (rest - val.min(rest), val.min(rest), test.min(n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for SplitPart {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "val" | "validation" => Ok(Self::Val),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown split part {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub fractions: SplitFractions,
    pub seed: u64,
    /// Draw the test partition from `test_seed` so it is shared across seeds.
    pub fixed_test: bool,
    pub test_seed: u64,
    /// Stratify every partition on the subjectivity of this value column.
    pub stratify: Option<usize>,
}

impl SplitOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            fractions: SplitFractions::default(),
            seed,
            fixed_test: true,
            test_seed: 0,
            stratify: None,
        }
    }
}

/// Disjoint train/validation/test argument ids, each in corpus order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
    pub test_seed: Option<u64>,
    pub fractions: SplitFractions,
}

impl SplitSpec {
    pub fn ids(&self, part: SplitPart) -> &[String] {
        match part {
            SplitPart::Train => &self.train_ids,
            SplitPart::Val => &self.val_ids,
            SplitPart::Test => &self.test_ids,
        }
    }
}

fn split_group(rows: &[usize], opts: &SplitOptions, stratum: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (_, n_val, n_test) = opts.fractions.sizes(rows.len());
    let mut rows = rows.to_vec();
    if opts.fixed_test {
        rows.shuffle(&mut seed::rng(opts.test_seed, "split-test", stratum));
        let mut rest = rows.split_off(n_test);
        let test = rows;
        rest.sort_unstable();
        rest.shuffle(&mut seed::rng(opts.seed, "split-train", stratum));
        let train = rest.split_off(n_val);
        (train, rest, test)
    } else {
        rows.shuffle(&mut seed::rng(opts.seed, "split-all", stratum));
        let mut rest = rows.split_off(n_test);
        let test = rows;
        let train = rest.split_off(n_val);
        (train, rest, test)
    }
}

/// Seeded train/validation/test partition of the corpus arguments.
pub fn make_splits(corpus: &Corpus, opts: &SplitOptions) -> Result<SplitSpec, CorpusError> {
    opts.fractions.validate()?;
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let groups: Vec<Vec<usize>> = match opts.stratify {
        None => vec![(0..corpus.len()).collect()],
        Some(v) => {
            corpus.check_value(v)?;
            let col = corpus.subjectivity().column(v);
            let (pos, neg): (Vec<usize>, Vec<usize>) = (0..corpus.len()).partition(|&i| col[i] == 1);
            vec![neg, pos]
        }
    };
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (g, rows) in groups.iter().enumerate() {
        let (tr, va, te) = split_group(rows, opts, g as u64);
        train.extend(tr);
        val.extend(va);
        test.extend(te);
    }
    if train.is_empty() || test.is_empty() {
        return Err(CorpusError::InvalidSplit(format!(
            "corpus of {} arguments leaves an empty train or test partition",
            corpus.len()
        )));
    }
    let ids = |mut rows: Vec<usize>| {
        rows.sort_unstable();
        rows.into_iter()
            .map(|i| corpus.argument_ids()[i].clone())
            .collect::<Vec<_>>()
    };
    Ok(SplitSpec {
        train_ids: ids(train),
        val_ids: ids(val),
        test_ids: ids(test),
        seed: opts.seed,
        test_seed: opts.fixed_test.then_some(opts.test_seed),
        fractions: opts.fractions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ValueSelection;
    use ndarray::Array3;
    use std::collections::HashSet;

    fn corpus(n: usize) -> Corpus {
        let ann = Array3::from_shape_fn((n, 2, 1), |(i, j, _)| u8::from(j == 0 && i % 3 == 0));
        Corpus::from_parts(
            (0..n).map(|i| format!("A{i:05}")).collect(),
            (0..n).map(|i| format!("text {i}")).collect(),
            vec!["W1".into(), "W2".into()],
            ann,
            ValueSelection::new(vec!["v".into()], vec![0], 1).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn published_proportions_on_2781_arguments() {
        assert_eq!(SplitFractions::default().sizes(2781), (1952, 217, 612));
        let spec = make_splits(&corpus(2781), &SplitOptions::new(3)).unwrap();
        assert_eq!(spec.test_ids.len(), 612);
        assert_eq!(spec.val_ids.len(), 217);
        assert_eq!(spec.train_ids.len(), 1952);
    }

    #[test]
    fn partitions_are_disjoint_and_exhaustive() {
        let c = corpus(101);
        for fixed in [true, false] {
            let opts = SplitOptions {
                fixed_test: fixed,
                ..SplitOptions::new(11)
            };
            let spec = make_splits(&c, &opts).unwrap();
            let all: Vec<&String> = spec
                .train_ids
                .iter()
                .chain(&spec.val_ids)
                .chain(&spec.test_ids)
                .collect();
            let set: HashSet<_> = all.iter().collect();
            assert_eq!(all.len(), 101);
            assert_eq!(set.len(), 101);
        }
    }

    #[test]
    fn fixed_test_is_shared_across_seeds() {
        let c = corpus(200);
        let base = make_splits(&c, &SplitOptions::new(0)).unwrap();
        for s in 1..5 {
            let other = make_splits(&c, &SplitOptions::new(s)).unwrap();
            assert_eq!(other.test_ids, base.test_ids);
            assert_ne!(other.train_ids, base.train_ids);
        }
    }

    #[test]
    fn determinism_and_bad_fractions() {
        let c = corpus(50);
        let opts = SplitOptions::new(9);
        assert_eq!(make_splits(&c, &opts).unwrap(), make_splits(&c, &opts).unwrap());
        let bad = SplitOptions {
            fractions: SplitFractions {
                train: 1.0,
                test: 0.0,
                val_of_train: 0.1,
            },
            ..opts.clone()
        };
        assert!(matches!(make_splits(&c, &bad), Err(CorpusError::InvalidSplit(_))));
        let uneven = SplitOptions {
            fractions: SplitFractions {
                train: 0.5,
                test: 0.3,
                val_of_train: 0.1,
            },
            ..opts
        };
        assert!(make_splits(&c, &uneven).is_err());
    }

    #[test]
    fn stratified_split_keeps_class_shares() {
        let c = corpus(300);
        let opts = SplitOptions {
            stratify: Some(0),
            ..SplitOptions::new(4)
        };
        let spec = make_splits(&c, &opts).unwrap();
        let idx = c.id_index();
        let pos = spec
            .test_ids
            .iter()
            .filter(|a| c.subjectivity()[[idx[a.as_str()], 0]] == 1)
            .count();
        // 100 subjective rows, 22% of them in test.
        assert_eq!(pos, 22);
        assert_eq!(spec.test_ids.len(), 66);
    }
}
