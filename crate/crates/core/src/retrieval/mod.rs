//! Caption → garment retrieval.
//!
//! Two linear towers map hashed caption n-grams and item features into a
//! shared unit sphere. They are trained with a symmetric in-batch InfoNCE
//! loss. Search runs over an exact scan or a hand-written HNSW graph.

mod encoder;
mod hnsw;
mod index;
mod train;

use thiserror::Error;

use crate::codec::CodecError;
use crate::garment::ItemId;

pub use encoder::{
    item_input, DualEncoder, ItemEncoder, TextEncoder, TrainingSummary, EMBED_DIM, ITEM_INPUT_DIM,
};
pub use hnsw::{HnswIndex, HnswParams};
pub use index::{ExactIndex, SearchHit, VectorIndex};
pub use train::{
    batch_loss_and_grads, info_nce, train_contrastive, ContrastiveConfig, ContrastivePair,
    EncoderGrads,
};

/// Unit-norm tolerance for embeddings entering an index.
pub const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("caption has no tokens")]
    EmptyCaption,
    #[error("expected dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("index is empty")]
    EmptyIndex,
    #[error("item id {0} is already indexed")]
    DuplicateId(ItemId),
    #[error("vector for item {id} has norm {norm}, expected 1")]
    NotNormalized { id: ItemId, norm: f64 },
    #[error("loss became non-finite in epoch {0}")]
    NonFiniteLoss(usize),
    #[error("need at least {need} training pairs, got {got}")]
    InsufficientPairs { need: usize, got: usize },
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("batch size must be at least 2, got {0}")]
    InvalidBatchSize(usize),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit length in place and returns the original norm.
/// A zero vector is left unchanged.
pub fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}
