use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{normalize, RetrievalError};
use crate::codec::{CodecError, Reader, Writer};
use crate::garment::{AttributeVector, ATTRIBUTE_COUNT, FEATURE_DIM};
use crate::text::{HashingFeaturizer, SparseVector};

pub const EMBED_DIM: usize = 64;
/// Attributes followed by render features.
pub const ITEM_INPUT_DIM: usize = ATTRIBUTE_COUNT + FEATURE_DIM;

const MAGIC: &[u8; 4] = b"ENC1";
const FORMAT_VERSION: u32 = 1;
/// Weight scale at initialization. Small enough that every embedding starts
/// close to the shared bias direction.
const INIT_STD: f64 = 1e-3;

/// Item tower input: the attribute vector followed by the render features.
pub fn item_input(attributes: &AttributeVector, features: &[f64; FEATURE_DIM]) -> Vec<f64> {
    let mut out = Vec::with_capacity(ITEM_INPUT_DIM);
    out.extend_from_slice(attributes.values());
    out.extend_from_slice(features);
    out
}

/// Hashed caption n-grams → linear projection + bias → unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoder {
    pub featurizer: HashingFeaturizer,
    pub dim: usize,
    /// Row-major `buckets × dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl TextEncoder {
    pub fn featurize(&self, caption: &str) -> Result<SparseVector, RetrievalError> {
        let x = self.featurizer.featurize(caption);
        if x.is_empty() {
            return Err(RetrievalError::EmptyCaption);
        }
        Ok(x)
    }

    pub(crate) fn hidden(&self, x: &SparseVector) -> Vec<f64> {
        let mut h = self.bias.clone();
        for &(k, count) in &x.entries {
            let row = &self.weights[k as usize * self.dim..(k as usize + 1) * self.dim];
            for (hd, w) in h.iter_mut().zip(row) {
                *hd += count * w;
            }
        }
        h
    }

    pub fn encode_features(&self, x: &SparseVector) -> Vec<f64> {
        let mut h = self.hidden(x);
        normalize(&mut h);
        h
    }

    pub fn encode(&self, caption: &str) -> Result<Vec<f64>, RetrievalError> {
        Ok(self.encode_features(&self.featurize(caption)?))
    }
}

/// Item feature vector → linear projection + bias → unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemEncoder {
    pub input_dim: usize,
    pub dim: usize,
    /// Row-major `input_dim × dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ItemEncoder {
    pub(crate) fn hidden(&self, input: &[f64]) -> Vec<f64> {
        let mut h = self.bias.clone();
        for (r, &u) in input.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            let row = &self.weights[r * self.dim..(r + 1) * self.dim];
            for (hd, w) in h.iter_mut().zip(row) {
                *hd += u * w;
            }
        }
        h
    }

    pub fn encode(&self, input: &[f64]) -> Result<Vec<f64>, RetrievalError> {
        if input.len() != self.input_dim {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.input_dim,
                got: input.len(),
            });
        }
        let mut h = self.hidden(input);
        normalize(&mut h);
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingSummary {
    pub seed: u64,
    pub epochs: u32,
    pub batch_size: u32,
    pub temperature: f64,
    pub learning_rate: f64,
    /// Mean batch loss before the first update.
    pub initial_loss: f64,
    /// Mean batch loss per epoch.
    pub loss_history: Vec<f64>,
}

/// Both towers plus training metadata, persisted together.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoder {
    pub text: TextEncoder,
    pub item: ItemEncoder,
    pub summary: TrainingSummary,
}

impl DualEncoder {
    /// Fresh towers: tiny Gaussian weights and one shared random unit bias,
    /// so all initial embeddings nearly coincide and in-batch logits are
    /// close to uniform.
    pub fn init(featurizer: HashingFeaturizer, input_dim: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut bias: Vec<f64> = (0..dim).map(|_| std_normal.sample(&mut rng)).collect();
        normalize(&mut bias);
        let small = Normal::new(0.0, INIT_STD).expect("valid std");
        let text_weights = (0..featurizer.buckets() * dim)
            .map(|_| small.sample(&mut rng))
            .collect();
        let item_weights = (0..input_dim * dim)
            .map(|_| small.sample(&mut rng))
            .collect();
        Self {
            text: TextEncoder {
                featurizer,
                dim,
                weights: text_weights,
                bias: bias.clone(),
            },
            item: ItemEncoder {
                input_dim,
                dim,
                weights: item_weights,
                bias,
            },
            summary: TrainingSummary {
                seed,
                ..TrainingSummary::default()
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.text.dim
    }

    pub fn is_finite(&self) -> bool {
        self.text
            .weights
            .iter()
            .chain(&self.text.bias)
            .chain(&self.item.weights)
            .chain(&self.item.bias)
            .all(|x| x.is_finite())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(MAGIC);
        let s = &self.summary;
        w.u32(FORMAT_VERSION)
            .u32(self.text.featurizer.bucket_bits)
            .u32(self.text.featurizer.max_order)
            .u32(self.item.input_dim as u32)
            .u32(self.text.dim as u32)
            .u64(s.seed)
            .u32(s.epochs)
            .u32(s.batch_size)
            .f64(s.temperature)
            .f64(s.learning_rate)
            .f64(s.initial_loss)
            .u32(s.loss_history.len() as u32)
            .f64s(&s.loss_history)
            .f64s(&self.text.weights)
            .f64s(&self.text.bias)
            .f64s(&self.item.weights)
            .f64s(&self.item.bias);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RetrievalError> {
        let mut r = Reader::with_magic(bytes, MAGIC)?;
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CodecError::Invalid(format!("unsupported ENC1 version {version}")).into());
        }
        let bucket_bits = r.u32("bucket bits")?;
        let max_order = r.u32("max order")?;
        if !(1..=24).contains(&bucket_bits) || max_order == 0 {
            return Err(CodecError::Invalid("bad featurizer configuration".into()).into());
        }
        let featurizer = HashingFeaturizer::new(bucket_bits, max_order);
        let input_dim = r.u32("input dim")? as usize;
        let dim = r.u32("embedding dim")? as usize;
        if dim == 0 || input_dim == 0 {
            return Err(CodecError::Invalid("zero dimension".into()).into());
        }
        let seed = r.u64("seed")?;
        let epochs = r.u32("epochs")?;
        let batch_size = r.u32("batch size")?;
        let temperature = r.f64("temperature")?;
        let learning_rate = r.f64("learning rate")?;
        let initial_loss = r.f64("initial loss")?;
        let history_len = r.u32("history length")? as usize;
        let loss_history = r.f64s(history_len, "loss history")?;
        let text_weights = r.f64s(featurizer.buckets() * dim, "text weights")?;
        let text_bias = r.f64s(dim, "text bias")?;
        let item_weights = r.f64s(input_dim * dim, "item weights")?;
        let item_bias = r.f64s(dim, "item bias")?;
        r.finish()?;
        let enc = Self {
            text: TextEncoder {
                featurizer,
                dim,
                weights: text_weights,
                bias: text_bias,
            },
            item: ItemEncoder {
                input_dim,
                dim,
                weights: item_weights,
                bias: item_bias,
            },
            summary: TrainingSummary {
                seed,
                epochs,
                batch_size,
                temperature,
                learning_rate,
                initial_loss,
                loss_history,
            },
        };
        if !enc.is_finite() {
            return Err(CodecError::Invalid("non-finite encoder weights".into()).into());
        }
        Ok(enc)
    }
}
