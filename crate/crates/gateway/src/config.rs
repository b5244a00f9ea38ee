//! Service configuration: a TOML file plus environment overrides.
//!
//! Every key is optional. `STYLECHAT_PORT` and `STYLECHAT_DATA_DIR` override
//! the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stylechat_core::garment::ATTRIBUTE_COUNT;
use stylechat_core::retrieval::HnswParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub port: u16,
    pub data_dir: PathBuf,
    /// Directory of static UI files served at `/`.
    pub static_dir: Option<PathBuf>,
    /// Results per search.
    pub k: usize,
    pub snapshot_interval_secs: u64,
    /// Optional overrides of the shipped data files.
    pub grammar: Option<PathBuf>,
    pub vocabulary: Option<PathBuf>,
    pub dialog_policy: Option<PathBuf>,
    /// Attribute names in index order; must match the vocabulary.
    pub attributes: Vec<String>,
    pub data: DataConfig,
    pub index: IndexConfig,
    pub nlu: NluConfig,
    pub encoders: EncoderConfig,
    pub flow: FlowConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub catalog_size: usize,
    pub catalog_seed: u64,
    pub grammar_seed: u64,
    pub cap_per_intent: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexKind {
    Exact,
    Hnsw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IndexConfig {
    pub kind: IndexKind,
    pub m: usize,
    pub m0: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NluConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub temperature: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Number of (latent, attributes) pairs sampled for training.
    pub pairs: usize,
    pub pair_seed: u64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub layers: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("data"),
            static_dir: None,
            k: 6,
            snapshot_interval_secs: 30,
            grammar: None,
            vocabulary: None,
            dialog_policy: None,
            attributes: [
                "sleeve_length",
                "garment_length",
                "waist_fit",
                "neckline_depth",
                "pattern_density",
                "hue",
            ]
            .map(String::from)
            .to_vec(),
            data: DataConfig::default(),
            index: IndexConfig::default(),
            nlu: NluConfig::default(),
            encoders: EncoderConfig::default(),
            flow: FlowConfig::default(),
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            catalog_size: 5000,
            catalog_seed: 2024,
            grammar_seed: 1,
            cap_per_intent: 10_000,
        }
    }
}

impl Default for IndexConfig {
    fn default() -> Self {
        let p = HnswParams::default();
        Self {
            kind: IndexKind::Hnsw,
            m: p.m,
            m0: p.m0,
            ef_construction: p.ef_construction,
            ef_search: p.ef_search,
            seed: p.seed,
        }
    }
}

impl IndexConfig {
    pub fn hnsw_params(&self) -> HnswParams {
        HnswParams {
            m: self.m,
            m0: self.m0,
            ef_construction: self.ef_construction,
            ef_search: self.ef_search,
            seed: self.seed,
        }
    }
}

impl Default for NluConfig {
    fn default() -> Self {
        let d = stylechat_core::nlu::IntentTrainConfig::default();
        Self {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            seed: d.seed,
        }
    }
}

impl Default for EncoderConfig {
    fn default() -> Self {
        let d = stylechat_core::retrieval::ContrastiveConfig::default();
        Self {
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            temperature: d.temperature,
            seed: d.seed,
        }
    }
}

impl Default for FlowConfig {
    fn default() -> Self {
        let d = stylechat_core::flow::FlowTrainConfig::default();
        Self {
            pairs: 10_000,
            pair_seed: 4242,
            epochs: d.epochs,
            learning_rate: d.learning_rate,
            batch_size: d.batch_size,
            layers: d.layers,
            hidden: d.hidden,
            seed: d.seed,
        }
    }
}

impl ServiceConfig {
    /// Reads `path` if given, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok())?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(port) = get("STYLECHAT_PORT") {
            self.port = port
                .parse()
                .with_context(|| format!("STYLECHAT_PORT is not a port number: {port}"))?;
        }
        if let Some(dir) = get("STYLECHAT_DATA_DIR") {
            self.data_dir = PathBuf::from(dir);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes.len() != ATTRIBUTE_COUNT {
            bail!(
                "config lists {} attributes; the renderer and flow use {ATTRIBUTE_COUNT}",
                self.attributes.len()
            );
        }
        if self.k == 0 {
            bail!("k must be at least 1");
        }
        if self.index.m < 2 || self.index.m0 < self.index.m {
            bail!("index.m must be at least 2 and index.m0 at least index.m");
        }
        if self.data.cap_per_intent == 0 {
            bail!("data.cap_per_intent must be positive");
        }
        Ok(())
    }

    /// Derives every seed from one value, for the CLI `--seed` flag.
    pub fn reseed(&mut self, seed: u64) {
        let derive = |salt: u64| seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(salt);
        self.data.catalog_seed = derive(1);
        self.data.grammar_seed = derive(2);
        self.index.seed = derive(3);
        self.nlu.seed = derive(4);
        self.encoders.seed = derive(5);
        self.flow.pair_seed = derive(6);
        self.flow.seed = derive(7);
    }

    pub fn path(&self, artifact: Artifact) -> PathBuf {
        self.data_dir.join(artifact.file_name())
    }
}

/// Files under the data directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Artifact {
    Catalog,
    NluExamples,
    NluModel,
    Lexicon,
    Encoders,
    Index,
    Flow,
    Sessions,
}

impl Artifact {
    pub fn file_name(self) -> &'static str {
        match self {
            Artifact::Catalog => "catalog.jsonl",
            Artifact::NluExamples => "nlu_examples.jsonl",
            Artifact::NluModel => "intent.nlu",
            Artifact::Lexicon => "lexicon.json",
            Artifact::Encoders => "encoders.enc",
            Artifact::Index => "index.vix",
            Artifact::Flow => "flow.cnf",
            Artifact::Sessions => "sessions.json",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_toml_keeps_defaults() {
        let c = ServiceConfig::from_toml("port = 9000\n[index]\nkind = \"exact\"\n").unwrap();
        assert_eq!(c.port, 9000);
        assert_eq!(c.index.kind, IndexKind::Exact);
        assert_eq!(c.index.m, 16);
        assert_eq!(c.k, 6);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ServiceConfig::from_toml("prot = 1\n").is_err());
    }

    #[test]
    fn env_overrides() {
        let mut c = ServiceConfig::default();
        c.apply_env(|k| match k {
            "STYLECHAT_PORT" => Some("1234".into()),
            "STYLECHAT_DATA_DIR" => Some("/tmp/x".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(c.port, 1234);
        assert_eq!(c.data_dir, PathBuf::from("/tmp/x"));
        assert!(c.apply_env(|_| Some("nope".into())).is_err());
    }

    #[test]
    fn reseed_is_deterministic_and_distinct() {
        let mut a = ServiceConfig::default();
        let mut b = ServiceConfig::default();
        a.reseed(7);
        b.reseed(7);
        assert_eq!(a, b);
        b.reseed(8);
        assert_ne!(a.data.catalog_seed, b.data.catalog_seed);
        assert_ne!(a.nlu.seed, a.encoders.seed);
    }

    #[test]
    fn attribute_count_is_checked() {
        let mut c = ServiceConfig::default();
        c.attributes.pop();
        assert!(c.validate().is_err());
    }
}
