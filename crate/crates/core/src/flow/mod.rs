//! Attribute-conditioned affine coupling flow.
//!
//! The flow maps a standard-normal base vector `z` to a garment latent `w`
//! given an attribute vector. Editing inverts a latent under its source
//! attributes and pushes the base vector forward under the target ones.

mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::codec::{CodecError, Reader, Writer};
use crate::garment::{AttributeVector, GarmentLatent, ATTRIBUTE_COUNT, LATENT_DIM};

pub use train::{nll_and_grads, train_mle, FlowTrainConfig, FlowTrainingMeta};

pub const DEFAULT_LAYERS: usize = 6;
pub const DEFAULT_HIDDEN: usize = 64;

const MAGIC: &[u8; 4] = b"CNF1";
const FORMAT_VERSION: u32 = 1;
/// Scale of the hidden-layer initialization.
const INIT_STD: f64 = 0.1;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {need} training pairs, got {got}")]
    InsufficientPairs { need: usize, got: usize },
    #[error("loss became non-finite in epoch {0}")]
    NonFiniteLoss(usize),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// One coupling layer. Half of the coordinates pass through unchanged and,
/// together with the attributes, feed a one-hidden-layer tanh network that
/// predicts a log-scale and a shift for the other half.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    /// When true the first half passes through and the second is transformed.
    pub pass_first: bool,
    /// `hidden × (half + attr_dim)`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `(2 · half) × hidden`: log-scale rows then shift rows.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

/// Values the backward pass needs from one layer evaluation.
pub(crate) struct LayerCache {
    pub cond_in: Vec<f64>,
    pub hidden: Vec<f64>,
    /// tanh of the raw log-scale output.
    pub tanh_raw: Vec<f64>,
    pub s: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalFlow {
    pub dim: usize,
    pub attr_dim: usize,
    pub hidden: usize,
    pub layers: Vec<CouplingLayer>,
    pub meta: FlowTrainingMeta,
}

impl ConditionalFlow {
    /// Random hidden weights and zero output weights, so a fresh flow is the
    /// identity map.
    pub fn init(dim: usize, attr_dim: usize, hidden: usize, layers: usize, seed: u64) -> Self {
        assert!(
            dim >= 2 && dim.is_multiple_of(2),
            "flow dimension must be even"
        );
        let half = dim / 2;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let layers = (0..layers)
            .map(|l| CouplingLayer {
                pass_first: l % 2 == 0,
                w1: (0..hidden * (half + attr_dim))
                    .map(|_| normal.sample(&mut rng))
                    .collect(),
                b1: vec![0.0; hidden],
                w2: vec![0.0; 2 * half * hidden],
                b2: vec![0.0; 2 * half],
            })
            .collect();
        Self {
            dim,
            attr_dim,
            hidden,
            layers,
            meta: FlowTrainingMeta {
                seed,
                ..FlowTrainingMeta::default()
            },
        }
    }

    /// The shipped garment configuration: 6 layers over the 16-dim latent.
    pub fn for_garments(seed: u64) -> Self {
        Self::init(
            LATENT_DIM,
            ATTRIBUTE_COUNT,
            DEFAULT_HIDDEN,
            DEFAULT_LAYERS,
            seed,
        )
    }

    pub fn half(&self) -> usize {
        self.dim / 2
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w1.len() + l.b1.len() + l.w2.len() + l.b2.len())
            .sum()
    }

    /// All weights in a flat buffer: per layer `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w1);
            out.extend_from_slice(&l.b1);
            out.extend_from_slice(&l.w2);
            out.extend_from_slice(&l.b2);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(
            params.len(),
            self.param_count(),
            "parameter length mismatch"
        );
        let mut rest = params;
        for l in &mut self.layers {
            for buf in [&mut l.w1, &mut l.b1, &mut l.w2, &mut l.b2] {
                let (head, tail) = rest.split_at(buf.len());
                buf.copy_from_slice(head);
                rest = tail;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.w1.iter()
                .chain(&l.b1)
                .chain(&l.w2)
                .chain(&l.b2)
                .all(|x| x.is_finite())
        })
    }

    /// Conditioning values in `[0, 1]` are fed to the networks as `2a − 1`.
    fn check(&self, x: &[f64], cond: &[f64]) -> Result<(), FlowError> {
        if x.len() != self.dim {
            return Err(FlowError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if cond.len() != self.attr_dim {
            return Err(FlowError::DimensionMismatch {
                expected: self.attr_dim,
                got: cond.len(),
            });
        }
        if x.iter().chain(cond).any(|v| !v.is_finite()) {
            return Err(FlowError::NonFiniteInput);
        }
        Ok(())
    }

    /// Index ranges of the pass-through and transformed halves.
    pub(crate) fn split(
        &self,
        layer: &CouplingLayer,
    ) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let h = self.half();
        if layer.pass_first {
            (0..h, h..self.dim)
        } else {
            (h..self.dim, 0..h)
        }
    }

    /// Log-scale and shift for the transformed half.
    pub(crate) fn conditioner(
        &self,
        layer: &CouplingLayer,
        pass: &[f64],
        signed: &[f64],
    ) -> LayerCache {
        let half = self.half();
        let in_dim = half + self.attr_dim;
        let mut cond_in = Vec::with_capacity(in_dim);
        cond_in.extend_from_slice(pass);
        cond_in.extend_from_slice(signed);
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &layer.w1[j * in_dim..(j + 1) * in_dim];
                let pre: f64 =
                    layer.b1[j] + row.iter().zip(&cond_in).map(|(w, c)| w * c).sum::<f64>();
                pre.tanh()
            })
            .collect();
        let out = |r: usize| {
            let row = &layer.w2[r * self.hidden..(r + 1) * self.hidden];
            layer.b2[r] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
        };
        let tanh_raw: Vec<f64> = (0..half).map(|r| out(r).tanh()).collect();
        let s = tanh_raw.iter().map(|t| 2.0 * t).collect();
        let b = (half..2 * half).map(out).collect();
        LayerCache {
            cond_in,
            hidden,
            tanh_raw,
            s,
            b,
        }
    }

    /// Base → latent. Returns the output and `log |det ∂w/∂z|`.
    pub fn forward(&self, z: &[f64], cond: &[f64]) -> Result<(Vec<f64>, f64), FlowError> {
        self.check(z, cond)?;
        let signed: Vec<f64> = cond.iter().map(|a| 2.0 * a - 1.0).collect();
        let mut x = z.to_vec();
        let mut logdet = 0.0;
        for layer in &self.layers {
            let (pass, tr) = self.split(layer);
            let c = self.conditioner(layer, &x[pass], &signed);
            for (k, i) in tr.enumerate() {
                x[i] = x[i] * c.s[k].exp() + c.b[k];
                logdet += c.s[k];
            }
        }
        Ok((x, logdet))
    }

    /// Latent → base. Returns the output and `log |det ∂z/∂w|`.
    pub fn inverse(&self, w: &[f64], cond: &[f64]) -> Result<(Vec<f64>, f64), FlowError> {
        self.check(w, cond)?;
        let signed: Vec<f64> = cond.iter().map(|a| 2.0 * a - 1.0).collect();
        let mut y = w.to_vec();
        let mut logdet = 0.0;
        for layer in self.layers.iter().rev() {
            let (pass, tr) = self.split(layer);
            let c = self.conditioner(layer, &y[pass], &signed);
            for (k, i) in tr.enumerate() {
                y[i] = (y[i] - c.b[k]) * (-c.s[k]).exp();
                logdet -= c.s[k];
            }
        }
        Ok((y, logdet))
    }

    /// Negative log-likelihood of `w` given the conditioning values.
    pub fn nll(&self, w: &[f64], cond: &[f64]) -> Result<f64, FlowError> {
        let (z, logdet) = self.inverse(w, cond)?;
        Ok(gaussian_nll(&z) - logdet)
    }

    /// `forward(inverse(w, source).z, target)`.
    pub fn edit(
        &self,
        latent: &GarmentLatent,
        source: &AttributeVector,
        target: &AttributeVector,
    ) -> Result<GarmentLatent, FlowError> {
        let (z, _) = self.inverse(&latent.0, source.values())?;
        let (w, _) = self.forward(&z, target.values())?;
        GarmentLatent::from_slice(&w).map_err(|_| FlowError::DimensionMismatch {
            expected: LATENT_DIM,
            got: w.len(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(MAGIC);
        w.u32(FORMAT_VERSION)
            .u32(self.layers.len() as u32)
            .u32(self.dim as u32)
            .u32(self.hidden as u32)
            .u32(self.attr_dim as u32);
        let m = &self.meta;
        w.u64(m.seed)
            .u32(m.epochs)
            .u32(m.batch_size)
            .f64(m.learning_rate)
            .f64(m.initial_nll)
            .u32(m.loss_history.len() as u32)
            .f64s(&m.loss_history);
        for l in &self.layers {
            w.u8(u8::from(l.pass_first));
        }
        w.f64s(&self.params());
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FlowError> {
        let invalid = |m: &str| FlowError::Codec(CodecError::Invalid(m.to_string()));
        let mut r = Reader::with_magic(bytes, MAGIC)?;
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(invalid(&format!("unsupported CNF1 version {version}")));
        }
        let k = r.u32("layer count")? as usize;
        let dim = r.u32("dimension")? as usize;
        let hidden = r.u32("hidden width")? as usize;
        let attr_dim = r.u32("attribute dimension")? as usize;
        if dim < 2
            || !dim.is_multiple_of(2)
            || hidden == 0
            || k > 1024
            || hidden > 1 << 16
            || dim > 1 << 16
        {
            return Err(invalid("bad flow shape"));
        }
        let seed = r.u64("seed")?;
        let epochs = r.u32("epochs")?;
        let batch_size = r.u32("batch size")?;
        let learning_rate = r.f64("learning rate")?;
        let initial_nll = r.f64("initial nll")?;
        let n = r.u32("history length")? as usize;
        let loss_history = r.f64s(n, "loss history")?;
        let mut flow = Self::init(dim, attr_dim, hidden, k, 0);
        for l in &mut flow.layers {
            l.pass_first = match r.u8("mask")? {
                0 => false,
                1 => true,
                _ => return Err(invalid("bad mask flag")),
            };
        }
        let params = r.f64s(flow.param_count(), "weights")?;
        r.finish()?;
        flow.set_params(&params);
        if !flow.is_finite() {
            return Err(invalid("non-finite flow weights"));
        }
        flow.meta = FlowTrainingMeta {
            seed,
            epochs,
            batch_size,
            learning_rate,
            initial_nll,
            loss_history,
        };
        Ok(flow)
    }
}

/// `½‖z‖² + (d/2)·ln 2π`.
pub fn gaussian_nll(z: &[f64]) -> f64 {
    0.5 * z.iter().map(|v| v * v).sum::<f64>()
        + 0.5 * z.len() as f64 * (2.0 * std::f64::consts::PI).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn randomized(seed: u64) -> ConditionalFlow {
        let mut f = ConditionalFlow::init(6, 3, 8, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let p: Vec<f64> = (0..f.param_count())
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        f.set_params(&p);
        f
    }

    #[test]
    fn fresh_flow_is_identity() {
        let f = ConditionalFlow::for_garments(1);
        let z: Vec<f64> = (0..16).map(|i| i as f64 * 0.3 - 2.0).collect();
        let (w, ld) = f.forward(&z, &[0.2; 6]).unwrap();
        assert_eq!(w, z);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn inverse_undoes_forward() {
        let f = randomized(4);
        let z = [0.3, -1.2, 2.0, 0.0, 0.7, -0.4];
        let cond = [0.1, 0.9, 0.5];
        let (w, ld_f) = f.forward(&z, &cond).unwrap();
        let (back, ld_i) = f.inverse(&w, &cond).unwrap();
        for (a, b) in back.iter().zip(z) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((ld_f + ld_i).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        let f = randomized(2);
        assert!(matches!(
            f.forward(&[0.0; 5], &[0.0; 3]),
            Err(FlowError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            f.forward(&[0.0; 6], &[0.0; 2]),
            Err(FlowError::DimensionMismatch { .. })
        ));
        let mut z = [0.0; 6];
        z[2] = f64::NAN;
        assert!(matches!(
            f.inverse(&z, &[0.0; 3]),
            Err(FlowError::NonFiniteInput)
        ));
    }

    #[test]
    fn bytes_round_trip() {
        let mut f = randomized(9);
        f.meta.loss_history = vec![1.0, 0.5];
        let bytes = f.to_bytes();
        assert_eq!(ConditionalFlow::from_bytes(&bytes).unwrap(), f);
        assert!(ConditionalFlow::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }
}
