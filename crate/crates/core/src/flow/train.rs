use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{gaussian_nll, ConditionalFlow, FlowError};
use crate::optim::Adam;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowTrainingMeta {
    pub seed: u64,
    pub epochs: u32,
    pub batch_size: u32,
    pub learning_rate: f64,
    /// Mean NLL over the training set before any update.
    pub initial_nll: f64,
    /// Mean NLL over the training set after each epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub layers: usize,
    pub hidden: usize,
}

impl Default for FlowTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 64,
            learning_rate: 2e-3,
            seed: 5,
            layers: super::DEFAULT_LAYERS,
            hidden: super::DEFAULT_HIDDEN,
        }
    }
}

pub const MIN_TRAINING_PAIRS: usize = 500;

/// Mean NLL over `batch` of `(w, cond)` pairs and its gradient with respect
/// to `flow.params()`.
pub fn nll_and_grads(flow: &ConditionalFlow, batch: &[(&[f64], &[f64])]) -> (f64, Vec<f64>) {
    let mut grads = vec![0.0; flow.param_count()];
    let mut offsets = Vec::with_capacity(flow.layers.len());
    let mut off = 0;
    for l in &flow.layers {
        offsets.push(off);
        off += l.w1.len() + l.b1.len() + l.w2.len() + l.b2.len();
    }

    let half = flow.half();
    let in_dim = half + flow.attr_dim;
    let h = flow.hidden;
    let mut total = 0.0;
    for &(w, cond) in batch {
        let signed: Vec<f64> = cond.iter().map(|a| 2.0 * a - 1.0).collect();
        // Inverse pass, remembering each layer's input and conditioner state.
        let mut y = w.to_vec();
        let mut caches = Vec::with_capacity(flow.layers.len());
        let mut sum_s = 0.0;
        for (li, layer) in flow.layers.iter().enumerate().rev() {
            let (pass, tr) = flow.split(layer);
            let c = flow.conditioner(layer, &y[pass], &signed);
            let input = y.clone();
            for (k, i) in tr.enumerate() {
                y[i] = (y[i] - c.b[k]) * (-c.s[k]).exp();
                sum_s += c.s[k];
            }
            caches.push((li, input, c));
        }
        total += gaussian_nll(&y) + sum_s;

        // dL/dz = z; walk the layers in the order they map back toward w.
        let mut g = y.clone();
        for (li, input, c) in caches.into_iter().rev() {
            let layer = &flow.layers[li];
            let (pass, tr) = flow.split(layer);
            let base = offsets[li];
            let (gw1, rest) = grads[base..].split_at_mut(layer.w1.len());
            let (gb1, rest) = rest.split_at_mut(layer.b1.len());
            let (gw2, rest) = rest.split_at_mut(layer.w2.len());
            let gb2 = &mut rest[..layer.b2.len()];

            // d/d(raw output): log-scale rows then shift rows.
            let mut dout = vec![0.0; 2 * half];
            let mut g_in = g.clone();
            for (k, i) in tr.clone().enumerate() {
                let e = (-c.s[k]).exp();
                let x_tr = (input[i] - c.b[k]) * e;
                g_in[i] = g[i] * e;
                let ds = 1.0 - g[i] * x_tr;
                dout[k] = ds * 2.0 * (1.0 - c.tanh_raw[k] * c.tanh_raw[k]);
                dout[half + k] = -g[i] * e;
            }
            let mut dhidden = vec![0.0; h];
            for r in 0..2 * half {
                gb2[r] += dout[r];
                let row = &layer.w2[r * h..(r + 1) * h];
                let grow = &mut gw2[r * h..(r + 1) * h];
                for j in 0..h {
                    grow[j] += dout[r] * c.hidden[j];
                    dhidden[j] += dout[r] * row[j];
                }
            }
            let mut dcond = vec![0.0; in_dim];
            for j in 0..h {
                let dpre = dhidden[j] * (1.0 - c.hidden[j] * c.hidden[j]);
                gb1[j] += dpre;
                let row = &layer.w1[j * in_dim..(j + 1) * in_dim];
                let grow = &mut gw1[j * in_dim..(j + 1) * in_dim];
                for q in 0..in_dim {
                    grow[q] += dpre * c.cond_in[q];
                    dcond[q] += dpre * row[q];
                }
            }
            for (q, i) in pass.enumerate() {
                g_in[i] += dcond[q];
            }
            g = g_in;
        }
    }
    let n = batch.len() as f64;
    for x in &mut grads {
        *x /= n;
    }
    (total / n, grads)
}

fn mean_nll(flow: &ConditionalFlow, pairs: &[(Vec<f64>, Vec<f64>)]) -> f64 {
    let sum: f64 = pairs
        .iter()
        .map(|(w, c)| flow.nll(w, c).unwrap_or(f64::INFINITY))
        .sum();
    sum / pairs.len() as f64
}

/// Maximum-likelihood training with Adam on shuffled mini-batches.
pub fn train_mle(
    pairs: &[(Vec<f64>, Vec<f64>)],
    config: &FlowTrainConfig,
) -> Result<ConditionalFlow, FlowError> {
    if pairs.len() < MIN_TRAINING_PAIRS {
        return Err(FlowError::InsufficientPairs {
            need: MIN_TRAINING_PAIRS,
            got: pairs.len(),
        });
    }
    let dim = pairs[0].0.len();
    let attr_dim = pairs[0].1.len();
    for (w, c) in pairs {
        if w.len() != dim || c.len() != attr_dim {
            return Err(FlowError::DimensionMismatch {
                expected: dim,
                got: w.len(),
            });
        }
        if w.iter().chain(c).any(|v| !v.is_finite()) {
            return Err(FlowError::NonFiniteInput);
        }
    }
    let mut flow = ConditionalFlow::init(dim, attr_dim, config.hidden, config.layers, config.seed);
    let initial_nll = mean_nll(&flow, pairs);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5151_5151);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut params = flow.params();
    let mut adam = Adam::new(params.len(), config.learning_rate);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            let batch: Vec<(&[f64], &[f64])> = chunk
                .iter()
                .map(|&i| (pairs[i].0.as_slice(), pairs[i].1.as_slice()))
                .collect();
            let (loss, grads) = nll_and_grads(&flow, &batch);
            if !loss.is_finite() {
                return Err(FlowError::NonFiniteLoss(epoch));
            }
            adam.step(&mut params, &grads);
            flow.set_params(&params);
        }
        let epoch_nll = mean_nll(&flow, pairs);
        if !epoch_nll.is_finite() {
            return Err(FlowError::NonFiniteLoss(epoch));
        }
        history.push(epoch_nll);
    }
    flow.meta = FlowTrainingMeta {
        seed: config.seed,
        epochs: config.epochs as u32,
        batch_size: config.batch_size as u32,
        learning_rate: config.learning_rate,
        initial_nll,
        loss_history: history,
    };
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_pairs() {
        let pairs = vec![(vec![0.0; 4], vec![0.5; 2]); 10];
        assert!(matches!(
            train_mle(&pairs, &FlowTrainConfig::default()),
            Err(FlowError::InsufficientPairs { need: 500, got: 10 })
        ));
    }

    #[test]
    fn loss_matches_nll() {
        let flow = ConditionalFlow::init(4, 2, 3, 2, 1);
        let w = [0.5, -0.25, 1.0, 2.0];
        let c = [0.1, 0.7];
        let (loss, _) = nll_and_grads(&flow, &[(&w, &c)]);
        assert!((loss - flow.nll(&w, &c).unwrap()).abs() < 1e-12);
    }
}
