use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Attr, AttributeVector, GarmentError, ATTRIBUTE_COUNT};
use crate::codec::{CodecError, Reader, Writer};

pub const LATENT_DIM: usize = 16;
pub const DEFAULT_NOISE: f64 = 0.1;

const MAGIC: &[u8; 4] = b"MIX1";

/// 16-dim latent code consumed by the decoder and edited by the flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GarmentLatent(pub [f64; LATENT_DIM]);

impl GarmentLatent {
    pub fn from_slice(values: &[f64]) -> Result<Self, GarmentError> {
        let arr: [f64; LATENT_DIM] =
            values
                .try_into()
                .map_err(|_| GarmentError::DimensionMismatch {
                    expected: LATENT_DIM,
                    got: values.len(),
                })?;
        Ok(Self(arr))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl TryFrom<Vec<f64>> for GarmentLatent {
    type Error = GarmentError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::from_slice(&v)
    }
}

impl From<GarmentLatent> for Vec<f64> {
    fn from(w: GarmentLatent) -> Self {
        w.0.to_vec()
    }
}

/// Ground-truth linear structure of the latent space: `w = A·â + ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    seed: u64,
    /// 16×6, row-major.
    mix: Vec<f64>,
    /// 6×16, row-major.
    pinv: Vec<f64>,
}

impl MixingMatrix {
    /// Seed the shipped blob was generated from.
    pub const SHIPPED_SEED: u64 = 2022;

    /// Draws `A` with i.i.d. standard normal entries and computes its
    /// pseudo-inverse by SVD.
    pub fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix: Vec<f64> = (0..LATENT_DIM * ATTRIBUTE_COUNT)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let a = DMatrix::from_row_slice(LATENT_DIM, ATTRIBUTE_COUNT, &mix);
        let pinv = a
            .pseudo_inverse(1e-12)
            .expect("pseudo-inverse of a finite matrix");
        let mut pinv_rows = Vec::with_capacity(LATENT_DIM * ATTRIBUTE_COUNT);
        for r in 0..ATTRIBUTE_COUNT {
            for c in 0..LATENT_DIM {
                pinv_rows.push(pinv[(r, c)]);
            }
        }
        Self {
            seed,
            mix,
            pinv: pinv_rows,
        }
    }

    /// The matrix bundled with the crate.
    pub fn shipped() -> Self {
        Self::from_bytes(include_bytes!("../../data/mixing.mix1"))
            .expect("shipped mixing matrix is valid")
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mix(&self, row: usize, col: usize) -> f64 {
        self.mix[row * ATTRIBUTE_COUNT + col]
    }

    pub fn pinv(&self, row: usize, col: usize) -> f64 {
        self.pinv[row * LATENT_DIM + col]
    }

    pub fn apply(&self, signed: &[f64; ATTRIBUTE_COUNT]) -> [f64; LATENT_DIM] {
        let mut w = [0.0; LATENT_DIM];
        for (r, out) in w.iter_mut().enumerate() {
            *out = (0..ATTRIBUTE_COUNT)
                .map(|c| self.mix(r, c) * signed[c])
                .sum();
        }
        w
    }

    pub fn project(&self, w: &[f64; LATENT_DIM]) -> [f64; ATTRIBUTE_COUNT] {
        let mut out = [0.0; ATTRIBUTE_COUNT];
        for (r, o) in out.iter_mut().enumerate() {
            *o = (0..LATENT_DIM).map(|c| self.pinv(r, c) * w[c]).sum();
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(MAGIC);
        w.u32(LATENT_DIM as u32)
            .u32(ATTRIBUTE_COUNT as u32)
            .u64(self.seed)
            .f64s(&self.mix)
            .f64s(&self.pinv);
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::with_magic(bytes, MAGIC)?;
        let rows = r.u32("rows")? as usize;
        let cols = r.u32("cols")? as usize;
        if rows != LATENT_DIM || cols != ATTRIBUTE_COUNT {
            return Err(CodecError::Invalid(format!(
                "mixing matrix is {rows}x{cols}, expected {LATENT_DIM}x{ATTRIBUTE_COUNT}"
            )));
        }
        let seed = r.u64("seed")?;
        let mix = r.f64s(rows * cols, "mix")?;
        let pinv = r.f64s(rows * cols, "pinv")?;
        r.finish()?;
        Ok(Self { seed, mix, pinv })
    }
}

/// `w = A·â + σ·ε` with `â` the attributes mapped to `[-1, 1]` and `ε`
/// standard normal noise drawn from `seed`.
pub fn sample_latent(
    mixing: &MixingMatrix,
    attributes: &AttributeVector,
    sigma: f64,
    seed: u64,
) -> GarmentLatent {
    let mut w = mixing.apply(&attributes.to_signed());
    if sigma != 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in w.iter_mut() {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * eps;
        }
    }
    GarmentLatent(w)
}

/// Least-squares attribute readout `pinv(A)·w`, mapped back to `[0, 1]`;
/// linear attributes are clamped and hue is wrapped.
pub fn decode(mixing: &MixingMatrix, w: &GarmentLatent) -> AttributeVector {
    let signed = mixing.project(&w.0);
    let mut out = [0.0; ATTRIBUTE_COUNT];
    for attr in Attr::ALL {
        let v = (signed[attr.index()] + 1.0) / 2.0;
        out[attr.index()] = if attr.is_cyclic() {
            v.rem_euclid(1.0)
        } else {
            v.clamp(0.0, 1.0)
        };
    }
    AttributeVector::new(out).expect("decoded attributes are in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn shipped_blob_matches_recorded_seed() {
        let shipped = MixingMatrix::shipped();
        assert_eq!(shipped.seed(), MixingMatrix::SHIPPED_SEED);
        assert_eq!(shipped, MixingMatrix::generate(MixingMatrix::SHIPPED_SEED));
    }

    #[test]
    fn pinv_is_left_inverse() {
        let m = MixingMatrix::shipped();
        for i in 0..ATTRIBUTE_COUNT {
            for j in 0..ATTRIBUTE_COUNT {
                let dot: f64 = (0..LATENT_DIM).map(|k| m.pinv(i, k) * m.mix(k, j)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12, "({i},{j}) = {dot}");
            }
        }
    }

    #[test]
    fn midpoint_maps_to_origin() {
        let m = MixingMatrix::shipped();
        let w = sample_latent(&m, &AttributeVector::uniform(0.5), 0.0, 1);
        assert!(w.0.iter().all(|&v| v == 0.0));
        let a = decode(&m, &GarmentLatent([0.0; LATENT_DIM]));
        assert_eq!(a, AttributeVector::uniform(0.5));
    }

    #[test]
    fn noiseless_round_trip_is_identity() {
        let m = MixingMatrix::shipped();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let vals: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.001..0.999));
            let a = AttributeVector::new(vals).unwrap();
            let back = decode(&m, &sample_latent(&m, &a, 0.0, 0));
            for d in a.abs_diff(&back) {
                assert!(d < 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_same_latent() {
        let m = MixingMatrix::shipped();
        let a = AttributeVector::uniform(0.3);
        assert_eq!(sample_latent(&m, &a, 0.1, 9), sample_latent(&m, &a, 0.1, 9));
        assert_ne!(
            sample_latent(&m, &a, 0.1, 9),
            sample_latent(&m, &a, 0.1, 10)
        );
    }

    #[test]
    fn bytes_round_trip() {
        let m = MixingMatrix::generate(77);
        assert_eq!(MixingMatrix::from_bytes(&m.to_bytes()).unwrap(), m);
        assert!(MixingMatrix::from_bytes(&m.to_bytes()[..40]).is_err());
    }
}
