//! Procedural garment world: a known latent → attribute → SVG mapping, a
//! synthetic captioned catalog, and a measurement oracle that reads
//! attributes back out of a rendered SVG.

mod catalog;
mod latent;
mod measure;
mod render;
mod vocab;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;

pub use catalog::{generate_catalog, read_catalog_jsonl, write_catalog_jsonl, CatalogItem, ItemId};
pub use latent::{decode, sample_latent, GarmentLatent, MixingMatrix, DEFAULT_NOISE, LATENT_DIM};
pub use measure::{measure, measure_svg};
pub use render::{hsv_to_rgb, render, GarmentRender, FEATURE_DIM, HUE_BINS, MAX_PATTERN_STROKES};
pub use vocab::{AttributeSpec, Vocabulary};

pub const ATTRIBUTE_COUNT: usize = 6;

#[derive(Debug, Error)]
pub enum GarmentError {
    #[error("attribute {index} out of range [0, 1]: {value}")]
    AttributeOutOfRange { index: usize, value: f64 },
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("cannot measure render: {0}")]
    Measure(String),
    #[error("invalid vocabulary: {0}")]
    Vocabulary(String),
    #[error("missing required slot `{0}`")]
    MissingRequiredSlot(String),
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Geometric role of each attribute index. Display names live in the
/// vocabulary data, not here.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Attr {
    SleeveLength = 0,
    GarmentLength = 1,
    WaistFit = 2,
    NecklineDepth = 3,
    PatternDensity = 4,
    Hue = 5,
}

impl Attr {
    pub const ALL: [Attr; ATTRIBUTE_COUNT] = [
        Attr::SleeveLength,
        Attr::GarmentLength,
        Attr::WaistFit,
        Attr::NecklineDepth,
        Attr::PatternDensity,
        Attr::Hue,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_cyclic(self) -> bool {
        self == Attr::Hue
    }
}

/// Six garment controls, each in `[0, 1]`. Hue is cyclic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct AttributeVector([f64; ATTRIBUTE_COUNT]);

impl AttributeVector {
    pub fn new(values: [f64; ATTRIBUTE_COUNT]) -> Result<Self, GarmentError> {
        for (index, &value) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(GarmentError::AttributeOutOfRange { index, value });
            }
        }
        Ok(Self(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, GarmentError> {
        let arr: [f64; ATTRIBUTE_COUNT] =
            values
                .try_into()
                .map_err(|_| GarmentError::DimensionMismatch {
                    expected: ATTRIBUTE_COUNT,
                    got: values.len(),
                })?;
        Self::new(arr)
    }

    pub fn uniform(value: f64) -> Self {
        Self::new([value; ATTRIBUTE_COUNT]).expect("uniform value in range")
    }

    pub fn get(&self, attr: Attr) -> f64 {
        self.0[attr.index()]
    }

    /// Copy with one attribute replaced; clamps (or wraps, for hue) into range.
    pub fn with(&self, attr: Attr, value: f64) -> Self {
        let mut out = self.0;
        out[attr.index()] = if attr.is_cyclic() {
            value.rem_euclid(1.0)
        } else {
            value.clamp(0.0, 1.0)
        };
        Self(out)
    }

    pub fn values(&self) -> &[f64; ATTRIBUTE_COUNT] {
        &self.0
    }

    /// Affine map of every component from `[0, 1]` onto `[-1, 1]`.
    pub fn to_signed(&self) -> [f64; ATTRIBUTE_COUNT] {
        self.0.map(|v| 2.0 * v - 1.0)
    }

    /// Per-attribute absolute difference, cyclic for hue.
    pub fn abs_diff(&self, other: &Self) -> [f64; ATTRIBUTE_COUNT] {
        let mut out = [0.0; ATTRIBUTE_COUNT];
        for attr in Attr::ALL {
            let d = (self.get(attr) - other.get(attr)).abs();
            out[attr.index()] = if attr.is_cyclic() { d.min(1.0 - d) } else { d };
        }
        out
    }
}

impl TryFrom<Vec<f64>> for AttributeVector {
    type Error = GarmentError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::from_slice(&v)
    }
}

impl From<AttributeVector> for Vec<f64> {
    fn from(a: AttributeVector) -> Self {
        a.0.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        assert!(matches!(
            AttributeVector::new([0.0, 0.5, 1.0, 1.01, 0.0, 0.0]),
            Err(GarmentError::AttributeOutOfRange { index: 3, .. })
        ));
        assert!(AttributeVector::new([f64::NAN; 6]).is_err());
        assert!(matches!(
            AttributeVector::from_slice(&[0.5; 5]),
            Err(GarmentError::DimensionMismatch { got: 5, .. })
        ));
    }

    #[test]
    fn hue_difference_is_cyclic() {
        let a = AttributeVector::uniform(0.5).with(Attr::Hue, 0.98);
        let b = a.with(Attr::Hue, 0.01);
        assert!((a.abs_diff(&b)[5] - 0.03).abs() < 1e-12);
        assert_eq!(a.with(Attr::Hue, 1.25).get(Attr::Hue), 0.25);
    }

    #[test]
    fn serde_as_plain_array() {
        let a = AttributeVector::uniform(0.25);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, "[0.25,0.25,0.25,0.25,0.25,0.25]");
        assert!(serde_json::from_str::<AttributeVector>("[0.1,2.0,0,0,0,0]").is_err());
    }
}
