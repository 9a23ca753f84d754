use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::seed;

/// Parallel index lists into one batch.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TripletBatch {
    pub anchor_idx: Vec<usize>,
    pub positive_idx: Vec<usize>,
    pub negative_idx: Vec<usize>,
    /// Anchors with no other member of their class.
    pub skipped: Vec<usize>,
    /// The batch held a single class, so no triplet exists.
    pub single_class: bool,
}

impl TripletBatch {
    pub fn len(&self) -> usize {
        self.anchor_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor_idx.is_empty()
    }
}

/// For every anchor with a same-label partner, draws one positive and one
/// negative uniformly.
pub fn sample_triplets(labels: &[u8], seed: u64) -> TripletBatch {
    let mut out = TripletBatch::default();
    let ones: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let zeros: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] != 1).collect();
    if ones.is_empty() || zeros.is_empty() {
        out.single_class = true;
        out.skipped = (0..labels.len()).collect();
        return out;
    }
    let mut rng = seed::rng(seed, "triplets", 0);
    for (i, &label) in labels.iter().enumerate() {
        let (same, other) = if label == 1 { (&ones, &zeros) } else { (&zeros, &ones) };
        if same.len() < 2 {
            out.skipped.push(i);
            continue;
        }
        // Uniform over the class minus the anchor.
        let pick = loop {
            let &c = same.choose(&mut rng).expect("non-empty");
            if c != i {
                break c;
            }
        };
        let &neg = other.choose(&mut rng).expect("non-empty");
        out.anchor_idx.push(i);
        out.positive_idx.push(pick);
        out.negative_idx.push(neg);
    }
    out
}
