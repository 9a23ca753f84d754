use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::EncoderError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    MultiLabel(usize),
    Binary,
}

impl HeadKind {
    pub fn out_dim(self) -> usize {
        match self {
            Self::MultiLabel(k) => k,
            Self::Binary => 1,
        }
    }
}

/// Affine map from embeddings to logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationHead {
    pub kind: HeadKind,
    /// `[embedding_dim, out_dim]`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl ClassificationHead {
    pub fn zeros(kind: HeadKind, dim: usize) -> Self {
        Self {
            kind,
            weight: Array2::zeros((dim, kind.out_dim())),
            bias: Array1::zeros(kind.out_dim()),
        }
    }

    /// Weights uniform in `±1/sqrt(dim)`, zero bias.
    pub fn init<R: Rng>(kind: HeadKind, dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (dim as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((dim, kind.out_dim()), || rng.random_range(-bound..=bound));
        Self {
            kind,
            weight,
            bias: Array1::zeros(kind.out_dim()),
        }
    }

    pub fn dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// `embeddings · W + b`, no activation.
pub fn head_forward(embeddings: ArrayView2<'_, f64>, head: &ClassificationHead) -> Result<Array2<f64>, EncoderError> {
    if embeddings.ncols() != head.dim() {
        return Err(EncoderError::DimensionMismatch {
            expected: head.dim(),
            found: embeddings.ncols(),
        });
    }
    Ok(embeddings.dot(&head.weight) + &head.bias)
}
