//! Offline stages: data generation, training, and loading the trained
//! artifacts back for serving.

use std::fs;
use std::num::NonZeroUsize;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylechat_core::codec::write_atomic;
use stylechat_core::dialog::{DialogPolicy, SHIPPED_POLICY};
use stylechat_core::flow::{train_mle, ConditionalFlow, FlowTrainConfig};
use stylechat_core::garment::{
    generate_catalog, read_catalog_jsonl, sample_latent, write_catalog_jsonl, AttributeVector,
    CatalogItem, MixingMatrix, Vocabulary, ATTRIBUTE_COUNT, DEFAULT_NOISE, LATENT_DIM,
};
use stylechat_core::grammar::{self, expand, parse_grammar, GrammarFile, TrainingExample};
use stylechat_core::nlu::{train_intent, EntityLexicon, IntentModel, IntentTrainConfig};
use stylechat_core::retrieval::{
    item_input, train_contrastive, ContrastiveConfig, ContrastivePair, DualEncoder, VectorIndex,
    ITEM_INPUT_DIM,
};

use crate::config::{Artifact, IndexKind, ServiceConfig};

pub fn load_vocabulary(config: &ServiceConfig) -> Result<Vocabulary> {
    let vocab = match &config.vocabulary {
        Some(p) => Vocabulary::from_json(&read_text(p)?)
            .with_context(|| format!("parsing vocabulary {}", p.display()))?,
        None => Vocabulary::shipped(),
    };
    let names = vocab.names();
    if names
        != config
            .attributes
            .iter()
            .map(String::as_str)
            .collect::<Vec<_>>()
    {
        bail!(
            "config attributes {:?} do not match the vocabulary {:?}",
            config.attributes,
            names
        );
    }
    Ok(vocab)
}

pub fn load_grammar(config: &ServiceConfig) -> Result<GrammarFile> {
    let source = match &config.grammar {
        Some(p) => read_text(p)?,
        None => grammar::FASHION_GRAMMAR.to_string(),
    };
    Ok(parse_grammar(&source)?)
}

pub fn load_policy(config: &ServiceConfig) -> Result<DialogPolicy> {
    let vocab = load_vocabulary(config)?;
    let text = match &config.dialog_policy {
        Some(p) => read_text(p)?,
        None => SHIPPED_POLICY.to_string(),
    };
    Ok(DialogPolicy::from_json(&text, vocab)?)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn catalog(config: &ServiceConfig, vocab: &Vocabulary) -> Vec<CatalogItem> {
    generate_catalog(
        config.data.catalog_size,
        config.data.catalog_seed,
        &MixingMatrix::shipped(),
        vocab,
    )
}

pub fn nlu_examples(config: &ServiceConfig, grammar: &GrammarFile) -> Vec<TrainingExample> {
    let cap = NonZeroUsize::new(config.data.cap_per_intent).expect("validated positive");
    expand(grammar, cap, config.data.grammar_seed)
}

/// Writes the catalog and the NLU training set. Same seed, same bytes.
pub fn gen_data(config: &ServiceConfig) -> Result<(usize, usize)> {
    let vocab = load_vocabulary(config)?;
    let items = catalog(config, &vocab);
    let examples = nlu_examples(config, &load_grammar(config)?);
    write_atomic(
        &config.path(Artifact::Catalog),
        write_catalog_jsonl(&items).as_bytes(),
    )?;
    write_atomic(
        &config.path(Artifact::NluExamples),
        grammar::to_jsonl(&examples).as_bytes(),
    )?;
    Ok((items.len(), examples.len()))
}

pub fn intent_config(config: &ServiceConfig) -> IntentTrainConfig {
    IntentTrainConfig {
        epochs: config.nlu.epochs,
        learning_rate: config.nlu.learning_rate,
        batch_size: config.nlu.batch_size,
        seed: config.nlu.seed,
    }
}

pub fn contrastive_config(config: &ServiceConfig) -> ContrastiveConfig {
    ContrastiveConfig {
        epochs: config.encoders.epochs,
        learning_rate: config.encoders.learning_rate,
        batch_size: config.encoders.batch_size,
        temperature: config.encoders.temperature,
        seed: config.encoders.seed,
        ..ContrastiveConfig::default()
    }
}

pub fn flow_config(config: &ServiceConfig) -> FlowTrainConfig {
    FlowTrainConfig {
        epochs: config.flow.epochs,
        batch_size: config.flow.batch_size,
        learning_rate: config.flow.learning_rate,
        seed: config.flow.seed,
        layers: config.flow.layers,
        hidden: config.flow.hidden,
    }
}

pub fn train_nlu(config: &ServiceConfig) -> Result<IntentModel> {
    let path = config.path(Artifact::NluExamples);
    let examples = grammar::from_jsonl(&read_text(&path)?)
        .with_context(|| format!("parsing {}", path.display()))?;
    let model = train_intent(&examples, &intent_config(config))?;
    let lexicon = EntityLexicon::from_grammar(&load_grammar(config)?)?;
    write_atomic(&config.path(Artifact::NluModel), &model.to_bytes())?;
    write_atomic(
        &config.path(Artifact::Lexicon),
        lexicon.to_json().as_bytes(),
    )?;
    Ok(model)
}

pub fn contrastive_pairs(items: &[CatalogItem]) -> Vec<ContrastivePair> {
    items
        .iter()
        .map(|item| ContrastivePair {
            caption: item.caption.clone(),
            input: item_input(&item.attributes, &item.render.features),
        })
        .collect()
}

pub fn build_index(
    config: &ServiceConfig,
    encoders: &DualEncoder,
    items: &[CatalogItem],
) -> Result<VectorIndex> {
    let mut index = match config.index.kind {
        IndexKind::Exact => VectorIndex::exact(encoders.dim()),
        IndexKind::Hnsw => VectorIndex::hnsw(encoders.dim(), config.index.hnsw_params()),
    };
    let entries = items
        .iter()
        .map(|item| {
            let input = item_input(&item.attributes, &item.render.features);
            Ok((item.id, encoders.item.encode(&input)?))
        })
        .collect::<Result<Vec<_>>>()?;
    index.merge(entries)?;
    Ok(index)
}

pub fn train_encoders(config: &ServiceConfig) -> Result<DualEncoder> {
    let items = read_catalog(&config.path(Artifact::Catalog))?;
    let encoders = train_contrastive(&contrastive_pairs(&items), &contrastive_config(config))?;
    let index = build_index(config, &encoders, &items)?;
    write_atomic(&config.path(Artifact::Encoders), &encoders.to_bytes())?;
    write_atomic(&config.path(Artifact::Index), &index.to_bytes())?;
    Ok(encoders)
}

/// `(latent, attributes)` pairs from their own seed, so the flow never
/// sees the served catalog.
pub fn flow_pairs(n: usize, seed: u64, mixing: &MixingMatrix) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let values: [f64; ATTRIBUTE_COUNT] =
                std::array::from_fn(|_| rng.random_range(0.0..1.0));
            let a = AttributeVector::new(values).expect("uniform draws are in range");
            let w = sample_latent(mixing, &a, DEFAULT_NOISE, rng.next_u64());
            (w.0.to_vec(), values.to_vec())
        })
        .collect()
}

pub fn train_flow(config: &ServiceConfig) -> Result<ConditionalFlow> {
    let pairs = flow_pairs(
        config.flow.pairs,
        config.flow.pair_seed,
        &MixingMatrix::shipped(),
    );
    let flow = train_mle(&pairs, &flow_config(config))?;
    write_atomic(&config.path(Artifact::Flow), &flow.to_bytes())?;
    Ok(flow)
}

pub fn read_catalog(path: &Path) -> Result<Vec<CatalogItem>> {
    read_catalog_jsonl(&read_text(path)?).with_context(|| format!("parsing {}", path.display()))
}

/// Everything the service needs at runtime.
#[derive(Debug, Clone)]
pub struct Models {
    pub policy: DialogPolicy,
    pub intent: IntentModel,
    pub lexicon: EntityLexicon,
    pub encoders: DualEncoder,
    pub flow: ConditionalFlow,
    pub mixing: MixingMatrix,
    pub catalog: Vec<CatalogItem>,
    pub index: VectorIndex,
}

impl Models {
    /// Loads every artifact from the data directory. A missing or unreadable
    /// file is reported by path.
    pub fn load(config: &ServiceConfig) -> Result<Self> {
        let policy = load_policy(config)?;
        let load = |a: Artifact| read_bytes(&config.path(a));
        let intent = IntentModel::from_bytes(&load(Artifact::NluModel)?)
            .with_context(|| format!("decoding {}", config.path(Artifact::NluModel).display()))?;
        let lexicon_path = config.path(Artifact::Lexicon);
        let lexicon = EntityLexicon::from_json(&read_text(&lexicon_path)?)
            .with_context(|| format!("decoding {}", lexicon_path.display()))?;
        let encoders = DualEncoder::from_bytes(&load(Artifact::Encoders)?)
            .with_context(|| format!("decoding {}", config.path(Artifact::Encoders).display()))?;
        let flow = ConditionalFlow::from_bytes(&load(Artifact::Flow)?)
            .with_context(|| format!("decoding {}", config.path(Artifact::Flow).display()))?;
        let index = VectorIndex::from_bytes(&load(Artifact::Index)?)
            .with_context(|| format!("decoding {}", config.path(Artifact::Index).display()))?;
        let catalog = read_catalog(&config.path(Artifact::Catalog))?;
        let models = Self {
            policy,
            intent,
            lexicon,
            encoders,
            flow,
            mixing: MixingMatrix::shipped(),
            catalog,
            index,
        };
        models.check()?;
        Ok(models)
    }

    /// Generates data and trains every model in memory, without touching
    /// the data directory.
    pub fn train(config: &ServiceConfig) -> Result<Self> {
        let policy = load_policy(config)?;
        let grammar = load_grammar(config)?;
        let intent = train_intent(&nlu_examples(config, &grammar), &intent_config(config))?;
        let lexicon = EntityLexicon::from_grammar(&grammar)?;
        let catalog = catalog(config, policy.vocabulary());
        let encoders =
            train_contrastive(&contrastive_pairs(&catalog), &contrastive_config(config))?;
        let index = build_index(config, &encoders, &catalog)?;
        let mixing = MixingMatrix::shipped();
        let flow = train_mle(
            &flow_pairs(config.flow.pairs, config.flow.pair_seed, &mixing),
            &flow_config(config),
        )?;
        let models = Self {
            policy,
            intent,
            lexicon,
            encoders,
            flow,
            mixing,
            catalog,
            index,
        };
        models.check()?;
        Ok(models)
    }

    /// Cross-artifact consistency: dimensions agree and every indexed id
    /// has a catalog row.
    pub fn check(&self) -> Result<()> {
        if self.flow.dim != LATENT_DIM || self.flow.attr_dim != ATTRIBUTE_COUNT {
            bail!(
                "flow is {}-dim with {} attributes; expected {LATENT_DIM} and {ATTRIBUTE_COUNT}",
                self.flow.dim,
                self.flow.attr_dim
            );
        }
        if self.encoders.item.input_dim != ITEM_INPUT_DIM {
            bail!(
                "item encoder takes {} inputs; expected {ITEM_INPUT_DIM}",
                self.encoders.item.input_dim
            );
        }
        if self.index.dim() != self.encoders.dim() {
            bail!(
                "index dimension {} differs from encoder dimension {}",
                self.index.dim(),
                self.encoders.dim()
            );
        }
        let ids: std::collections::HashSet<_> = self.catalog.iter().map(|c| c.id).collect();
        if let Some(missing) = self.index.ids().into_iter().find(|id| !ids.contains(id)) {
            return Err(anyhow!("index item {missing} has no catalog row"));
        }
        Ok(())
    }

    /// Writes every artifact into the data directory, in the layout `load` reads.
    pub fn save(&self, config: &ServiceConfig) -> Result<()> {
        write_atomic(&config.path(Artifact::NluModel), &self.intent.to_bytes())?;
        write_atomic(
            &config.path(Artifact::Lexicon),
            self.lexicon.to_json().as_bytes(),
        )?;
        write_atomic(&config.path(Artifact::Encoders), &self.encoders.to_bytes())?;
        write_atomic(&config.path(Artifact::Flow), &self.flow.to_bytes())?;
        write_atomic(&config.path(Artifact::Index), &self.index.to_bytes())?;
        write_atomic(
            &config.path(Artifact::Catalog),
            write_catalog_jsonl(&self.catalog).as_bytes(),
        )?;
        Ok(())
    }
}
