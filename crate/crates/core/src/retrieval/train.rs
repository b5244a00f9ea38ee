use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::encoder::{DualEncoder, TrainingSummary};
use super::{dot, RetrievalError};
use crate::optim::Adam;
use crate::text::{HashingFeaturizer, SparseVector};

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastivePair {
    pub caption: String,
    pub input: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContrastiveConfig {
    pub featurizer: HashingFeaturizer,
    pub dim: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self {
            featurizer: HashingFeaturizer::CAPTION,
            dim: super::EMBED_DIM,
            batch_size: 64,
            temperature: 0.07,
            epochs: 30,
            learning_rate: 0.005,
            seed: 11,
        }
    }
}

/// Symmetric InfoNCE over unit vectors `t` (captions) and `v` (items), with
/// matching pairs on the diagonal. Returns the loss and its gradients with
/// respect to `t` and `v`.
pub fn info_nce(t: &[Vec<f64>], v: &[Vec<f64>], tau: f64) -> (f64, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = t.len();
    assert_eq!(v.len(), n, "batch halves differ in size");
    let logits: Vec<Vec<f64>> = t
        .iter()
        .map(|ti| v.iter().map(|vj| dot(ti, vj) / tau).collect())
        .collect();

    // g[i][j] accumulates dL/dS_ij.
    let mut g = vec![vec![0.0; n]; n];
    let mut loss = 0.0;
    let scale = 0.5 / n as f64;
    for i in 0..n {
        let (lse, probs) = log_softmax(n, |j| logits[i][j]);
        loss += lse - logits[i][i];
        for j in 0..n {
            g[i][j] += scale * (probs[j] - if i == j { 1.0 } else { 0.0 });
        }
    }
    for j in 0..n {
        let (lse, probs) = log_softmax(n, |i| logits[i][j]);
        loss += lse - logits[j][j];
        for i in 0..n {
            g[i][j] += scale * (probs[i] - if i == j { 1.0 } else { 0.0 });
        }
    }
    loss *= scale;

    let d = t.first().map_or(0, Vec::len);
    let mut dt = vec![vec![0.0; d]; n];
    let mut dv = vec![vec![0.0; d]; n];
    for i in 0..n {
        for j in 0..n {
            let gij = g[i][j] / tau;
            if gij == 0.0 {
                continue;
            }
            for k in 0..d {
                dt[i][k] += gij * v[j][k];
                dv[j][k] += gij * t[i][k];
            }
        }
    }
    (loss, dt, dv)
}

fn log_softmax(n: usize, f: impl Fn(usize) -> f64) -> (f64, Vec<f64>) {
    let max = (0..n).map(&f).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = (0..n).map(|j| (f(j) - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (max + sum.ln(), exps.into_iter().map(|e| e / sum).collect())
}

/// Backpropagates through `y = h / |h|`.
fn normalize_backward(h: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = dot(h, h).sqrt();
    let y: Vec<f64> = h.iter().map(|x| x / n).collect();
    let proj = dot(&y, dy);
    let dh = dy
        .iter()
        .zip(&y)
        .map(|(g, yi)| (g - yi * proj) / n)
        .collect();
    (y, dh)
}

/// Gradients for every encoder parameter, laid out like the encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub text_weights: Vec<f64>,
    pub text_bias: Vec<f64>,
    pub item_weights: Vec<f64>,
    pub item_bias: Vec<f64>,
}

/// Loss and parameter gradients for one batch of featurized pairs.
pub fn batch_loss_and_grads(
    enc: &DualEncoder,
    captions: &[&SparseVector],
    inputs: &[&[f64]],
    tau: f64,
) -> (f64, EncoderGrads) {
    let d = enc.dim();
    let ht: Vec<Vec<f64>> = captions.iter().map(|x| enc.text.hidden(x)).collect();
    let hv: Vec<Vec<f64>> = inputs.iter().map(|u| enc.item.hidden(u)).collect();
    let unit = |h: &Vec<f64>| {
        let n = dot(h, h).sqrt();
        h.iter().map(|x| x / n).collect::<Vec<f64>>()
    };
    let t: Vec<Vec<f64>> = ht.iter().map(unit).collect();
    let v: Vec<Vec<f64>> = hv.iter().map(unit).collect();
    let (loss, dt, dv) = info_nce(&t, &v, tau);

    let mut grads = EncoderGrads {
        text_weights: vec![0.0; enc.text.weights.len()],
        text_bias: vec![0.0; d],
        item_weights: vec![0.0; enc.item.weights.len()],
        item_bias: vec![0.0; d],
    };
    for (i, x) in captions.iter().enumerate() {
        let (_, dh) = normalize_backward(&ht[i], &dt[i]);
        for &(k, count) in &x.entries {
            let row = &mut grads.text_weights[k as usize * d..(k as usize + 1) * d];
            for (g, dhk) in row.iter_mut().zip(&dh) {
                *g += count * dhk;
            }
        }
        for (g, dhk) in grads.text_bias.iter_mut().zip(&dh) {
            *g += dhk;
        }
    }
    for (j, u) in inputs.iter().enumerate() {
        let (_, dh) = normalize_backward(&hv[j], &dv[j]);
        for (r, &ur) in u.iter().enumerate() {
            let row = &mut grads.item_weights[r * d..(r + 1) * d];
            for (g, dhk) in row.iter_mut().zip(&dh) {
                *g += ur * dhk;
            }
        }
        for (g, dhk) in grads.item_bias.iter_mut().zip(&dh) {
            *g += dhk;
        }
    }
    (loss, grads)
}

/// Trains both towers with Adam on shuffled mini-batches. A trailing batch
/// smaller than 2 is dropped.
pub fn train_contrastive(
    pairs: &[ContrastivePair],
    config: &ContrastiveConfig,
) -> Result<DualEncoder, RetrievalError> {
    if config.temperature.is_nan() || config.temperature <= 0.0 {
        return Err(RetrievalError::InvalidTemperature(config.temperature));
    }
    if config.batch_size < 2 {
        return Err(RetrievalError::InvalidBatchSize(config.batch_size));
    }
    let need = 2 * config.batch_size;
    if pairs.len() < need {
        return Err(RetrievalError::InsufficientPairs {
            need,
            got: pairs.len(),
        });
    }
    let input_dim = pairs[0].input.len();
    if let Some(bad) = pairs.iter().find(|p| p.input.len() != input_dim) {
        return Err(RetrievalError::DimensionMismatch {
            expected: input_dim,
            got: bad.input.len(),
        });
    }
    let mut enc = DualEncoder::init(config.featurizer, input_dim, config.dim, config.seed);
    let features: Vec<SparseVector> = pairs
        .iter()
        .map(|p| enc.text.featurize(&p.caption))
        .collect::<Result<_, _>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let batches = |order: &[usize]| -> Vec<Vec<usize>> {
        order
            .chunks(config.batch_size)
            .filter(|c| c.len() >= 2)
            .map(<[usize]>::to_vec)
            .collect()
    };
    let batch_loss = |enc: &DualEncoder, batch: &[usize]| {
        let xs: Vec<&SparseVector> = batch.iter().map(|&i| &features[i]).collect();
        let us: Vec<&[f64]> = batch.iter().map(|&i| pairs[i].input.as_slice()).collect();
        batch_loss_and_grads(enc, &xs, &us, config.temperature)
    };

    order.shuffle(&mut rng);
    let initial: Vec<f64> = batches(&order)
        .iter()
        .map(|b| batch_loss(&enc, b).0)
        .collect();
    let initial_loss = initial.iter().sum::<f64>() / initial.len() as f64;

    let mut adam_tw = Adam::new(enc.text.weights.len(), config.learning_rate);
    let mut adam_tb = Adam::new(enc.text.bias.len(), config.learning_rate);
    let mut adam_iw = Adam::new(enc.item.weights.len(), config.learning_rate);
    let mut adam_ib = Adam::new(enc.item.bias.len(), config.learning_rate);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let all = batches(&order);
        for batch in &all {
            let (loss, g) = batch_loss(&enc, batch);
            if !loss.is_finite() {
                return Err(RetrievalError::NonFiniteLoss(epoch));
            }
            total += loss;
            adam_tw.step(&mut enc.text.weights, &g.text_weights);
            adam_tb.step(&mut enc.text.bias, &g.text_bias);
            adam_iw.step(&mut enc.item.weights, &g.item_weights);
            adam_ib.step(&mut enc.item.bias, &g.item_bias);
        }
        history.push(total / all.len() as f64);
    }
    if !enc.is_finite() {
        return Err(RetrievalError::NonFiniteLoss(config.epochs));
    }
    enc.summary = TrainingSummary {
        seed: config.seed,
        epochs: config.epochs as u32,
        batch_size: config.batch_size as u32,
        temperature: config.temperature,
        learning_rate: config.learning_rate,
        initial_loss,
        loss_history: history,
    };
    Ok(enc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_embeddings_give_log_batch_size() {
        let e = vec![vec![1.0, 0.0, 0.0]; 8];
        let (loss, dt, dv) = info_nce(&e, &e, 0.07);
        assert!((loss - (8f64).ln()).abs() < 1e-12);
        assert!(dt.iter().chain(&dv).flatten().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_configuration() {
        let pairs = vec![
            ContrastivePair {
                caption: "a red dress".into(),
                input: vec![0.0; 3]
            };
            8
        ];
        let mut cfg = ContrastiveConfig {
            batch_size: 4,
            temperature: 0.0,
            ..ContrastiveConfig::default()
        };
        assert!(matches!(
            train_contrastive(&pairs, &cfg),
            Err(RetrievalError::InvalidTemperature(_))
        ));
        cfg.temperature = 0.07;
        assert!(matches!(
            train_contrastive(&pairs[..7], &cfg),
            Err(RetrievalError::InsufficientPairs { need: 8, got: 7 })
        ));
    }
}
