use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{IntentFrame, NluError};
use crate::codec::{CodecError, Reader, Writer};
use crate::grammar::TrainingExample;
use crate::text::{HashingFeaturizer, SparseVector};

const MAGIC: &[u8; 4] = b"NLU1";
const FORMAT_VERSION: u32 = 1;
/// Hash function id stored in the model file. 1 = FNV-1a 64, masked.
const HASH_FNV1A64: u8 = 1;

/// Maximum learning-rate halvings before an epoch is declared non-monotone.
const MAX_BACKTRACKS: usize = 30;
const MONOTONE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntentTrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for IntentTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 12,
            learning_rate: 0.5,
            batch_size: 32,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: u32,
    pub learning_rate: f64,
    pub final_loss: f64,
    /// Full-data loss before training and after each epoch.
    pub loss_history: Vec<f64>,
}

/// Linear softmax classifier over hashed n-gram counts.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentModel {
    featurizer: HashingFeaturizer,
    labels: Vec<String>,
    /// `labels × buckets`, row-major.
    weights: Vec<f64>,
    meta: TrainingMeta,
}

fn softmax_in_place(scores: &mut [f64]) {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for s in scores.iter_mut() {
        *s = (*s - max).exp();
        sum += *s;
    }
    for s in scores.iter_mut() {
        *s /= sum;
    }
}

fn scores(weights: &[f64], classes: usize, buckets: usize, x: &SparseVector) -> Vec<f64> {
    (0..classes)
        .map(|c| {
            let row = &weights[c * buckets..(c + 1) * buckets];
            x.entries.iter().map(|&(j, v)| row[j as usize] * v).sum()
        })
        .collect()
}

/// Mean cross-entropy of a `classes × buckets` weight matrix over labeled
/// sparse samples, with its dense gradient.
pub fn softmax_cross_entropy(
    weights: &[f64],
    classes: usize,
    buckets: usize,
    samples: &[(SparseVector, usize)],
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; weights.len()];
    let loss = accumulate(weights, classes, buckets, samples, Some(&mut grad));
    (loss, grad)
}

fn accumulate(
    weights: &[f64],
    classes: usize,
    buckets: usize,
    samples: &[(SparseVector, usize)],
    mut grad: Option<&mut Vec<f64>>,
) -> f64 {
    let n = samples.len() as f64;
    let mut loss = 0.0;
    for (x, y) in samples {
        let mut p = scores(weights, classes, buckets, x);
        softmax_in_place(&mut p);
        loss -= p[*y].max(f64::MIN_POSITIVE).ln();
        if let Some(g) = grad.as_deref_mut() {
            for (c, &pc) in p.iter().enumerate() {
                let delta = (pc - if c == *y { 1.0 } else { 0.0 }) / n;
                for &(j, v) in &x.entries {
                    g[c * buckets + j as usize] += delta * v;
                }
            }
        }
    }
    loss / n
}

/// One pass of sparse mini-batch gradient descent.
fn sgd_epoch(
    weights: &mut [f64],
    classes: usize,
    buckets: usize,
    samples: &[(SparseVector, usize)],
    order: &[usize],
    batch_size: usize,
    lr: f64,
) {
    for batch in order.chunks(batch_size) {
        let scale = lr / batch.len() as f64;
        // Gradients are computed against the pre-batch weights.
        let updates: Vec<(usize, Vec<f64>)> = batch
            .iter()
            .map(|&i| {
                let (x, y) = &samples[i];
                let mut p = scores(weights, classes, buckets, x);
                softmax_in_place(&mut p);
                p[*y] -= 1.0;
                (i, p)
            })
            .collect();
        for (i, delta) in updates {
            for (c, d) in delta.iter().enumerate() {
                for &(j, v) in &samples[i].0.entries {
                    weights[c * buckets + j as usize] -= scale * d * v;
                }
            }
        }
    }
}

/// Fits the classifier by seeded mini-batch gradient descent. After each
/// epoch the full training loss must not rise by more than 1e-6; an epoch
/// that does is retried from its starting weights at half the step size.
pub fn train_intent(
    examples: &[TrainingExample],
    config: &IntentTrainConfig,
) -> Result<IntentModel, NluError> {
    if examples.is_empty() {
        return Err(NluError::EmptyTrainingSet);
    }
    let mut labels: Vec<String> = Vec::new();
    for ex in examples {
        if !labels.contains(&ex.intent) {
            labels.push(ex.intent.clone());
        }
    }
    if labels.len() < 2 {
        return Err(NluError::DegenerateData(labels.len()));
    }
    let featurizer = HashingFeaturizer::INTENT;
    let samples: Vec<(SparseVector, usize)> = examples
        .iter()
        .map(|ex| {
            let y = labels
                .iter()
                .position(|l| *l == ex.intent)
                .expect("label indexed");
            (featurizer.featurize(&ex.text), y)
        })
        .collect();

    let classes = labels.len();
    let buckets = featurizer.buckets();
    let mut weights = vec![0.0; classes * buckets];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut lr = config.learning_rate;
    let mut loss = accumulate(&weights, classes, buckets, &samples, None);
    let mut history = vec![loss];
    let mut order: Vec<usize> = (0..samples.len()).collect();

    for epoch in 0..config.epochs {
        let mut attempts = 0;
        loop {
            order.shuffle(&mut rng);
            let mut trial = weights.clone();
            sgd_epoch(
                &mut trial,
                classes,
                buckets,
                &samples,
                &order,
                config.batch_size.max(1),
                lr,
            );
            let trial_loss = accumulate(&trial, classes, buckets, &samples, None);
            if !trial_loss.is_finite() {
                return Err(NluError::NonFiniteLoss(epoch));
            }
            if trial_loss <= loss + MONOTONE_TOLERANCE {
                weights = trial;
                loss = trial_loss;
                break;
            }
            attempts += 1;
            lr /= 2.0;
            if attempts > MAX_BACKTRACKS {
                return Err(NluError::NonMonotoneLoss {
                    epoch,
                    learning_rate: lr,
                });
            }
        }
        history.push(loss);
    }

    Ok(IntentModel {
        featurizer,
        labels,
        weights,
        meta: TrainingMeta {
            seed: config.seed,
            epochs: config.epochs as u32,
            learning_rate: config.learning_rate,
            final_loss: loss,
            loss_history: history,
        },
    })
}

/// Intent and softmax confidence for `text`; entities are left empty.
pub fn classify(model: &IntentModel, text: &str) -> Result<IntentFrame, NluError> {
    let probs = model.probabilities(text)?;
    // Strict comparison keeps the lowest label index on ties.
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    Ok(IntentFrame {
        intent: model.labels[best].clone(),
        confidence: probs[best],
        entities: Vec::new(),
        text: text.to_string(),
    })
}

impl IntentModel {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn meta(&self) -> &TrainingMeta {
        &self.meta
    }

    pub fn featurizer(&self) -> HashingFeaturizer {
        self.featurizer
    }

    pub fn probabilities(&self, text: &str) -> Result<Vec<f64>, NluError> {
        if text.trim().is_empty() {
            return Err(NluError::EmptyUtterance);
        }
        let x = self.featurizer.featurize(text);
        let mut p = scores(
            &self.weights,
            self.labels.len(),
            self.featurizer.buckets(),
            &x,
        );
        softmax_in_place(&mut p);
        Ok(p)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(MAGIC);
        w.u32(FORMAT_VERSION)
            .u8(HASH_FNV1A64)
            .u32(self.featurizer.bucket_bits)
            .u32(self.featurizer.max_order)
            .u32(self.labels.len() as u32);
        for label in &self.labels {
            w.str(label);
        }
        w.u64(self.meta.seed)
            .u32(self.meta.epochs)
            .f64(self.meta.learning_rate)
            .f64(self.meta.final_loss)
            .u32(self.meta.loss_history.len() as u32)
            .f64s(&self.meta.loss_history)
            .f64s(&self.weights);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NluError> {
        let mut r = Reader::with_magic(bytes, MAGIC)?;
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CodecError::Invalid(format!("unsupported NLU1 version {version}")).into());
        }
        let hash = r.u8("hash id")?;
        if hash != HASH_FNV1A64 {
            return Err(CodecError::Invalid(format!("unknown hash id {hash}")).into());
        }
        let bucket_bits = r.u32("bucket bits")?;
        let max_order = r.u32("max order")?;
        if !(1..=31).contains(&bucket_bits) || max_order == 0 {
            return Err(CodecError::Invalid("bad featurizer config".into()).into());
        }
        let featurizer = HashingFeaturizer::new(bucket_bits, max_order);
        let n_labels = r.u32("label count")? as usize;
        let labels = (0..n_labels)
            .map(|_| r.str("label"))
            .collect::<Result<Vec<_>, _>>()?;
        let seed = r.u64("seed")?;
        let epochs = r.u32("epochs")?;
        let learning_rate = r.f64("learning rate")?;
        let final_loss = r.f64("final loss")?;
        let n_hist = r.u32("history length")? as usize;
        let loss_history = r.f64s(n_hist, "loss history")?;
        let weights = r.f64s(n_labels * featurizer.buckets(), "weights")?;
        r.finish()?;
        if labels.is_empty() || weights.iter().any(|w| !w.is_finite()) {
            return Err(
                CodecError::Invalid("empty label table or non-finite weights".into()).into(),
            );
        }
        Ok(Self {
            featurizer,
            labels,
            weights,
            meta: TrainingMeta {
                seed,
                epochs,
                learning_rate,
                final_loss,
                loss_history,
            },
        })
    }
}
