use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    render, sample_latent, AttributeVector, GarmentLatent, GarmentRender, MixingMatrix, Vocabulary,
    DEFAULT_NOISE,
};

pub type ItemId = u64;

/// One row of the synthetic catalog. Serialized as a JSON line with fields
/// `id`, `attributes`, `latent`, `caption`, `svg` and `features`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub id: ItemId,
    pub attributes: AttributeVector,
    pub latent: GarmentLatent,
    pub caption: String,
    #[serde(flatten)]
    pub render: GarmentRender,
}

/// `n` seeded garments with uniform attributes, noisy latents and captions.
/// Ids run from 1 to `n`.
pub fn generate_catalog(
    n: usize,
    seed: u64,
    mixing: &MixingMatrix,
    vocab: &Vocabulary,
) -> Vec<CatalogItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (1..=n as u64)
        .map(|id| {
            let values: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let attributes = AttributeVector::new(values).expect("uniform draws are in range");
            let latent = sample_latent(mixing, &attributes, DEFAULT_NOISE, rng.next_u64());
            CatalogItem {
                id,
                attributes,
                latent,
                caption: vocab.caption(&attributes),
                render: render(&attributes),
            }
        })
        .collect()
}

pub fn write_catalog_jsonl(items: &[CatalogItem]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("catalog item serializes"));
        out.push('\n');
    }
    out
}

pub fn read_catalog_jsonl(text: &str) -> Result<Vec<CatalogItem>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garment::{decode, Attr};

    #[test]
    fn empty_and_deterministic() {
        let m = MixingMatrix::shipped();
        let v = Vocabulary::shipped();
        assert!(generate_catalog(0, 1, &m, &v).is_empty());
        assert_eq!(
            generate_catalog(20, 3, &m, &v),
            generate_catalog(20, 3, &m, &v)
        );
        assert_ne!(
            generate_catalog(5, 3, &m, &v),
            generate_catalog(5, 4, &m, &v)
        );
    }

    #[test]
    fn jsonl_round_trip() {
        let items = generate_catalog(3, 11, &MixingMatrix::shipped(), &Vocabulary::shipped());
        let text = write_catalog_jsonl(&items);
        assert_eq!(text.lines().count(), 3);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["id", "attributes", "latent", "caption", "svg", "features"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        assert_eq!(first["features"].as_array().unwrap().len(), 26);
        assert_eq!(read_catalog_jsonl(&text).unwrap(), items);
    }

    #[test]
    fn decode_error_is_small_on_average() {
        let m = MixingMatrix::shipped();
        let items = generate_catalog(1000, 8, &m, &Vocabulary::shipped());
        let mut total = [0.0; 6];
        for item in &items {
            let d = item.attributes.abs_diff(&decode(&m, &item.latent));
            for k in 0..6 {
                total[k] += d[k];
            }
        }
        for attr in Attr::ALL {
            let mean = total[attr.index()] / items.len() as f64;
            assert!(mean < 0.05, "{attr:?}: {mean}");
        }
    }
}
