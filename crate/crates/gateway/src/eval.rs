//! End-to-end evaluation. Trains every model from the configured seeds,
//! measures each acceptance metric against an oracle written here, and
//! returns a machine-readable report.
//!
//! The oracles deliberately avoid the code under test: recall is scored by
//! brute-force dot products, grammar counts by direct enumeration, gradients
//! by central differences of the public loss.

use std::collections::BTreeMap;
use std::num::NonZeroUsize;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use stylechat_core::dialog::{Action, DialogState, ItemCard, Phase};
use stylechat_core::flow::{nll_and_grads, train_mle, ConditionalFlow};
use stylechat_core::garment::{
    decode, measure, render, sample_latent, Attr, AttributeVector, MixingMatrix, DEFAULT_NOISE,
    LATENT_DIM,
};
use stylechat_core::grammar::{expand, expansion_count, parse_grammar, TrainingExample};
use stylechat_core::nlu::{
    classify, extract_entities, softmax_cross_entropy, train_intent, EntityLexicon,
    ExtractedEntity, IntentFrame, IntentModel, INDEX_REFERENCE,
};
use stylechat_core::retrieval::{train_contrastive, DualEncoder, HnswParams, VectorIndex};
use stylechat_core::text::{HashingFeaturizer, SparseVector};

use crate::config::ServiceConfig;
use crate::pipeline::{self, Models};
use crate::service::{AppState, ChatRequest, CommitRequest, EditRequest, TargetAttributes};

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub name: String,
    pub pass: bool,
    pub seconds: f64,
    pub metrics: BTreeMap<String, f64>,
    pub detail: String,
}

impl Criterion {
    pub fn line(&self) -> String {
        let metrics: Vec<String> = self
            .metrics
            .iter()
            .map(|(k, v)| format!("{k}={v:.6}"))
            .collect();
        format!(
            "{} {} ({:.2}s) {}{}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.seconds,
            metrics.join(" "),
            if self.detail.is_empty() {
                String::new()
            } else {
                format!(" [{}]", self.detail)
            }
        )
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub criteria: Vec<Criterion>,
    pub total_seconds: f64,
}

impl EvalReport {
    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Criterion> {
        self.criteria.iter().find(|c| c.name == name)
    }
}

struct Builder {
    name: &'static str,
    start: Instant,
    metrics: BTreeMap<String, f64>,
    failures: Vec<String>,
}

impl Builder {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            start: Instant::now(),
            metrics: BTreeMap::new(),
            failures: Vec::new(),
        }
    }

    fn metric(&mut self, key: &str, value: f64) -> f64 {
        self.metrics.insert(key.to_string(), value);
        value
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn finish(mut self, max_seconds: f64) -> Criterion {
        let seconds = self.start.elapsed().as_secs_f64();
        if seconds >= max_seconds {
            self.failures
                .push(format!("took {seconds:.1}s, budget {max_seconds}s"));
        }
        Criterion {
            name: self.name.to_string(),
            pass: self.failures.is_empty(),
            seconds,
            metrics: self.metrics,
            detail: self.failures.join("; "),
        }
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    // Box-Muller keeps this independent of the crate's sampling code.
    let v: Vec<f64> = (0..dim)
        .map(|_| {
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let u1: f64 = rng.random_range(f64::EPSILON..1.0);
            let u2: f64 = rng.random_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect()
}

/// Top-k ids by brute-force dot product, ties by ascending id.
fn brute_force_top(gallery: &[(u64, Vec<f64>)], q: &[f64], k: usize) -> Vec<u64> {
    let mut scored: Vec<(u64, f64)> = gallery.iter().map(|(id, v)| (*id, dot(v, q))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().take(k).map(|(id, _)| id).collect()
}

// Grammar

const WORDS: [&str; 8] = ["show", "me", "a", "nice", "dress", "please", "now", "the"];

/// One way to fill a template slot: a word and/or an entity (name, value).
type Choice = (Option<String>, Option<(String, String)>);
/// Words so far plus the entities they contain.
type Expansion = (Vec<String>, Vec<(String, String)>);

enum Piece {
    Lit(String),
    Alias(usize, bool),
    Entity(usize, bool),
}

/// A random small grammar together with its source text.
struct RandomGrammar {
    intents: Vec<Vec<Vec<Piece>>>,
    aliases: Vec<Vec<String>>,
    entities: Vec<Vec<(String, String)>>,
}

impl RandomGrammar {
    fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let phrase = |rng: &mut ChaCha8Rng, max: usize| {
            (0..rng.random_range(1..=max))
                .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                .collect::<Vec<_>>()
                .join(" ")
        };
        let aliases: Vec<Vec<String>> = (0..rng.random_range(0..3))
            .map(|_| {
                (0..rng.random_range(1..4))
                    .map(|_| phrase(&mut rng, 2))
                    .collect()
            })
            .collect();
        let entities: Vec<Vec<(String, String)>> = (0..rng.random_range(0..3))
            .map(|e| {
                (0..rng.random_range(1..4))
                    .map(|v| (format!("v{e}w{v}"), format!("c{}", v % 2)))
                    .collect()
            })
            .collect();
        let intents = (0..rng.random_range(1..4))
            .map(|_| {
                (0..rng.random_range(1..4))
                    .map(|_| {
                        (0..rng.random_range(1..6))
                            .map(|_| match rng.random_range(0..3) {
                                1 if !aliases.is_empty() => Piece::Alias(
                                    rng.random_range(0..aliases.len()),
                                    rng.random_bool(0.4),
                                ),
                                2 if !entities.is_empty() => Piece::Entity(
                                    rng.random_range(0..entities.len()),
                                    rng.random_bool(0.4),
                                ),
                                _ => Piece::Lit(phrase(&mut rng, 3)),
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Self {
            intents,
            aliases,
            entities,
        }
    }

    fn source(&self) -> String {
        let mut s = String::new();
        for (i, templates) in self.intents.iter().enumerate() {
            s.push_str(&format!("%[i{i}]\n"));
            for t in templates {
                let words: Vec<String> = t
                    .iter()
                    .map(|p| match p {
                        Piece::Lit(w) => w.clone(),
                        Piece::Alias(a, o) => format!("~[a{a}{}]", if *o { "?" } else { "" }),
                        Piece::Entity(e, o) => format!("@[e{e}{}]", if *o { "?" } else { "" }),
                    })
                    .collect();
                s.push_str(&format!("    {}\n", words.join(" ")));
            }
        }
        for (a, vs) in self.aliases.iter().enumerate() {
            s.push_str(&format!("~[a{a}]\n"));
            for v in vs {
                s.push_str(&format!("    {v}\n"));
            }
        }
        for (e, vs) in self.entities.iter().enumerate() {
            s.push_str(&format!("@[e{e}]\n"));
            for (surface, canon) in vs {
                s.push_str(&format!("    {surface} => {canon}\n"));
            }
        }
        s
    }

    /// Sorted (text, entities) for every expansion of intent `i`.
    fn enumerate(&self, i: usize) -> Vec<(String, Vec<(String, String)>)> {
        let mut out = Vec::new();
        for t in &self.intents[i] {
            let mut partial: Vec<Expansion> = vec![(vec![], vec![])];
            for piece in t {
                let options: Vec<Choice> = match piece {
                    Piece::Lit(w) => vec![(Some(w.clone()), None)],
                    Piece::Alias(a, opt) => self.aliases[*a]
                        .iter()
                        .map(|v| (Some(v.clone()), None))
                        .chain(opt.then_some((None, None)))
                        .collect(),
                    Piece::Entity(e, opt) => self.entities[*e]
                        .iter()
                        .map(|(s, c)| (Some(s.clone()), Some((format!("e{e}"), c.clone()))))
                        .chain(opt.then_some((None, None)))
                        .collect(),
                };
                partial = partial
                    .iter()
                    .flat_map(|(words, ents)| {
                        options.iter().map(move |(w, ent)| {
                            let mut words = words.clone();
                            let mut ents = ents.clone();
                            words.extend(w.clone());
                            ents.extend(ent.clone());
                            (words, ents)
                        })
                    })
                    .collect();
            }
            for (words, ents) in partial {
                let text = words
                    .join(" ")
                    .split_whitespace()
                    .collect::<Vec<_>>()
                    .join(" ");
                out.push((text, ents));
            }
        }
        out.sort();
        out
    }
}

pub fn grammar_criterion(grammars: u64) -> Criterion {
    let mut b = Builder::new("grammar");
    let cap = NonZeroUsize::new(1_000_000).expect("nonzero");
    let mut matched = 0u64;
    let mut deterministic = true;
    for seed in 0..grammars {
        let rg = RandomGrammar::generate(seed);
        let Ok(g) = parse_grammar(&rg.source()) else {
            b.require(false, format!("grammar {seed} failed to parse"));
            continue;
        };
        let examples = expand(&g, cap, seed);
        deterministic &= examples == expand(&g, cap, seed);
        let all = g.intents.iter().enumerate().all(|(i, block)| {
            let brute = rg.enumerate(i);
            let mut got: Vec<(String, Vec<(String, String)>)> = examples
                .iter()
                .filter(|ex| ex.intent == block.name)
                .map(|ex| {
                    let ents = ex
                        .entities
                        .iter()
                        .map(|e| (e.entity.clone(), e.value.clone()))
                        .collect();
                    (ex.text.clone(), ents)
                })
                .collect();
            got.sort();
            expansion_count(&g, block) == brute.len() as u128 && got == brute
        });
        matched += u64::from(all);
    }
    b.metric("grammars", grammars as f64);
    b.metric("matched", matched as f64);
    b.require(matched == grammars, "expansion differs from enumeration");
    b.require(deterministic, "expansion is not deterministic");
    b.finish(5.0)
}

// NLU

pub struct NluOutcome {
    pub criterion: Criterion,
    pub model: IntentModel,
}

fn intent_gradcheck() -> f64 {
    let featurizer = HashingFeaturizer::new(5, 2);
    let buckets = featurizer.buckets();
    let classes = 3;
    let samples: Vec<(SparseVector, usize)> = [
        "a red dress",
        "the second one",
        "start over",
        "red red dress",
    ]
    .iter()
    .enumerate()
    .map(|(i, t)| (featurizer.featurize(t), i % classes))
    .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let weights: Vec<f64> = (0..classes * buckets)
        .map(|_| rng.random_range(-0.5..0.5))
        .collect();
    let (_, grad) = softmax_cross_entropy(&weights, classes, buckets, &samples);
    // Reference loss written from the definition.
    let loss = |w: &[f64]| {
        samples
            .iter()
            .map(|(x, y)| {
                let s: Vec<f64> = (0..classes)
                    .map(|c| {
                        x.entries
                            .iter()
                            .map(|&(j, v)| w[c * buckets + j as usize] * v)
                            .sum()
                    })
                    .collect();
                let lse = s.iter().map(|v| v.exp()).sum::<f64>().ln();
                lse - s[*y]
            })
            .sum::<f64>()
            / samples.len() as f64
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..weights.len() {
        let mut p = weights.clone();
        p[i] += h;
        let up = loss(&p);
        p[i] -= 2.0 * h;
        let down = loss(&p);
        worst = worst.max(rel_err(grad[i], (up - down) / (2.0 * h)));
    }
    worst
}

fn entity_f1(lexicon: &EntityLexicon, test: &[TrainingExample]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for ex in test {
        let gold: Vec<(&str, &str, usize, usize)> = ex
            .entities
            .iter()
            .map(|e| (e.entity.as_str(), e.value.as_str(), e.start, e.end))
            .collect();
        let found = extract_entities(lexicon, &ex.text);
        let pred: Vec<(&str, &str, usize, usize)> = found
            .iter()
            .map(|e| (e.entity.as_str(), e.value.as_str(), e.start, e.end))
            .collect();
        let hits = pred.iter().filter(|p| gold.contains(p)).count();
        tp += hits;
        fp += pred.len() - hits;
        fn_ += gold.len() - hits;
    }
    if tp == 0 {
        return 0.0;
    }
    let p = tp as f64 / (tp + fp) as f64;
    let r = tp as f64 / (tp + fn_) as f64;
    2.0 * p * r / (p + r)
}

pub fn nlu_criterion(config: &ServiceConfig) -> Result<NluOutcome> {
    let mut b = Builder::new("nlu");
    let grammar = pipeline::load_grammar(config)?;
    let mut examples = pipeline::nlu_examples(config, &grammar);
    examples.shuffle(&mut ChaCha8Rng::seed_from_u64(
        config.data.grammar_seed ^ 0xe7a1,
    ));
    let split = examples.len() * 4 / 5;
    let (train, test) = examples.split_at(split);
    let model = train_intent(train, &pipeline::intent_config(config))?;
    let lexicon = EntityLexicon::from_grammar(&grammar)?;
    let correct = test
        .iter()
        .filter(|ex| classify(&model, &ex.text).is_ok_and(|f| f.intent == ex.intent))
        .count();
    b.metric("train_examples", train.len() as f64);
    b.metric("test_examples", test.len() as f64);
    let accuracy = b.metric("intent_accuracy", correct as f64 / test.len().max(1) as f64);
    let f1 = b.metric("entity_f1", entity_f1(&lexicon, test));
    let grad = b.metric("gradcheck_rel_err", intent_gradcheck());
    b.require(accuracy >= 0.95, "intent accuracy below 0.95");
    b.require(f1 >= 0.90, "entity F1 below 0.90");
    b.require(grad < 1e-4, "gradient check above 1e-4");
    Ok(NluOutcome {
        criterion: b.finish(120.0),
        model,
    })
}

// Retrieval

pub struct RetrievalOutcome {
    pub criterion: Criterion,
    pub encoders: DualEncoder,
}

pub fn retrieval_criterion(
    config: &ServiceConfig,
    catalog: &[stylechat_core::garment::CatalogItem],
) -> Result<RetrievalOutcome> {
    let mut b = Builder::new("retrieval");
    let split = catalog.len() * 4 / 5;
    let (train, held_out) = catalog.split_at(split);
    let encoders = train_contrastive(
        &pipeline::contrastive_pairs(train),
        &pipeline::contrastive_config(config),
    )?;
    let initial = b.metric("initial_loss", encoders.summary.initial_loss);
    b.metric("ln_batch", (config.encoders.batch_size as f64).ln());
    b.metric(
        "final_loss",
        encoders
            .summary
            .loss_history
            .last()
            .copied()
            .unwrap_or(f64::NAN),
    );

    let gallery: Vec<(u64, Vec<f64>)> = pipeline::contrastive_pairs(held_out)
        .into_iter()
        .zip(held_out)
        .map(|(p, item)| Ok((item.id, encoders.item.encode(&p.input)?)))
        .collect::<Result<_>>()?;
    let (mut r1, mut r5) = (0usize, 0usize);
    for item in held_out {
        let q = encoders.text.encode(&item.caption)?;
        let top = brute_force_top(&gallery, &q, 5);
        r1 += usize::from(top.first() == Some(&item.id));
        r5 += usize::from(top.contains(&item.id));
    }
    let n = held_out.len().max(1) as f64;
    let recall1 = b.metric("recall_at_1", r1 as f64 / n);
    let recall5 = b.metric("recall_at_5", r5 as f64 / n);
    b.metric("held_out", held_out.len() as f64);

    let hnsw_recall = b.metric(
        "hnsw_recall_at_10",
        hnsw_recall(config.index.hnsw_params(), 5000, 100, config.index.seed),
    );
    b.require(
        (initial - 64f64.ln()).abs() <= 0.3,
        "initial loss outside ln(64) +- 0.3",
    );
    b.require(recall1 >= 0.8, "recall@1 below 0.8");
    b.require(recall5 >= 0.95, "recall@5 below 0.95");
    b.require(hnsw_recall >= 0.95, "HNSW recall@10 below 0.95");
    Ok(RetrievalOutcome {
        criterion: b.finish(600.0),
        encoders,
    })
}

/// Mean recall@10 of HNSW against a brute-force scan over random unit
/// vectors.
pub fn hnsw_recall(params: HnswParams, n: usize, queries: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4e4e);
    let entries: Vec<(u64, Vec<f64>)> = (0..n as u64)
        .map(|i| (i, random_unit(&mut rng, 64)))
        .collect();
    let mut index = VectorIndex::hnsw(64, params);
    index
        .merge(entries.clone())
        .expect("fresh unit vectors merge");
    let mut total = 0.0;
    for _ in 0..queries {
        let q = random_unit(&mut rng, 64);
        let truth = brute_force_top(&entries, &q, 10);
        let got = index.search(&q, 10).expect("non-empty index");
        total += got.iter().filter(|h| truth.contains(&h.id)).count() as f64 / 10.0;
    }
    total / queries as f64
}

// Flow

pub struct FlowOutcome {
    pub criterion: Criterion,
    pub flow: ConditionalFlow,
}

fn flow_gradcheck() -> f64 {
    let mut flow = ConditionalFlow::init(4, 3, 5, 1, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let p: Vec<f64> = (0..flow.param_count())
        .map(|_| rng.random_range(-0.6..0.6))
        .collect();
    flow.set_params(&p);
    let data: Vec<(Vec<f64>, Vec<f64>)> = (0..3)
        .map(|_| {
            (
                gaussian(&mut rng, 4),
                (0..3).map(|_| rng.random_range(0.0..1.0)).collect(),
            )
        })
        .collect();
    let batch: Vec<(&[f64], &[f64])> = data
        .iter()
        .map(|(w, a)| (w.as_slice(), a.as_slice()))
        .collect();
    let (_, grads) = nll_and_grads(&flow, &batch);
    let loss = |params: &[f64]| {
        let mut f = flow.clone();
        f.set_params(params);
        data.iter()
            .map(|(w, a)| f.nll(w, a).expect("finite"))
            .sum::<f64>()
            / data.len() as f64
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let mut q = p.clone();
        q[i] += h;
        let up = loss(&q);
        q[i] -= 2.0 * h;
        let down = loss(&q);
        worst = worst.max(rel_err(grads[i], (up - down) / (2.0 * h)));
    }
    worst
}

/// Sleeve length 0.2 to 0.9 on catalog-style latents, scored by measuring
/// the rendered garments. Returns (fraction moved up, mean off-target drift).
pub fn edit_efficacy(
    flow: &ConditionalFlow,
    mixing: &MixingMatrix,
    trials: usize,
    seed: u64,
) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut moved, mut drift) = (0usize, 0.0);
    for _ in 0..trials {
        let mut v: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        v[Attr::SleeveLength.index()] = 0.2;
        let source = AttributeVector::new(v).expect("in range");
        let target = source.with(Attr::SleeveLength, 0.9);
        let w = sample_latent(mixing, &source, DEFAULT_NOISE, rng.next_u64());
        let edited = flow.edit(&w, &source, &target).expect("finite latent");
        let before = measure(&render(&decode(mixing, &w))).expect("renders measure");
        let after = measure(&render(&decode(mixing, &edited))).expect("renders measure");
        moved += usize::from(after.get(Attr::SleeveLength) > before.get(Attr::SleeveLength));
        let others: f64 = Attr::ALL
            .iter()
            .filter(|a| **a != Attr::SleeveLength)
            .map(|&a| {
                let d = (after.get(a) - before.get(a)).abs();
                if a.is_cyclic() {
                    d.min(1.0 - d)
                } else {
                    d
                }
            })
            .sum();
        drift += others / 5.0;
    }
    (moved as f64 / trials as f64, drift / trials as f64)
}

pub fn flow_criterion(config: &ServiceConfig, mixing: &MixingMatrix) -> Result<FlowOutcome> {
    let mut b = Builder::new("flow");
    let pairs = pipeline::flow_pairs(config.flow.pairs, config.flow.pair_seed, mixing);
    let flow = train_mle(&pairs, &pipeline::flow_config(config))?;
    let initial = b.metric("initial_nll", flow.meta.initial_nll);
    let last = b.metric(
        "final_nll",
        flow.meta.loss_history.last().copied().unwrap_or(f64::NAN),
    );
    b.metric("nll_drop_fraction", (initial - last) / initial.abs());

    let mut rng = ChaCha8Rng::seed_from_u64(config.flow.seed ^ 0x1e7);
    let (mut worst, mut worst_ld): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let w: Vec<f64> = gaussian(&mut rng, LATENT_DIM)
            .iter()
            .map(|x| 2.0 * x)
            .collect();
        let a: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
        let (z, ld_inv) = flow.inverse(&w, &a)?;
        let (back, ld_fwd) = flow.forward(&z, &a)?;
        worst = back
            .iter()
            .zip(&w)
            .map(|(x, y)| (x - y).abs())
            .fold(worst, f64::max);
        worst_ld = worst_ld.max((ld_inv + ld_fwd).abs());
    }
    let inv = b.metric("inverse_max_err", worst);
    let ld = b.metric("logdet_antisymmetry", worst_ld);

    let identity = ConditionalFlow::for_garments(config.flow.seed);
    let n = 4000;
    let nll: f64 = (0..n)
        .map(|_| {
            let w = gaussian(&mut rng, LATENT_DIM);
            let a: Vec<f64> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
            identity.nll(&w, &a).expect("finite")
        })
        .sum::<f64>()
        / n as f64;
    let id_nll = b.metric("identity_nll", nll);
    let expected = b.metric(
        "identity_nll_expected",
        8.0 * (1.0 + std::f64::consts::TAU.ln()),
    );
    let grad = b.metric("gradcheck_rel_err", flow_gradcheck());
    let (moved, drift) = edit_efficacy(&flow, mixing, 200, config.flow.seed ^ 0xed17);
    b.metric("edit_moved_fraction", moved);
    b.metric("edit_off_target_drift", drift);

    b.require(inv < 1e-5, "inverse error above 1e-5");
    b.require(ld < 1e-8, "log-det antisymmetry above 1e-8");
    b.require(
        (id_nll - expected).abs() < 0.5,
        "identity NLL off by more than 0.5",
    );
    b.require(grad < 1e-4, "gradient check above 1e-4");
    b.require(
        moved >= 0.9,
        "edit moved sleeves in fewer than 90% of trials",
    );
    b.require(drift < 0.1, "off-target drift above 0.1");
    Ok(FlowOutcome {
        criterion: b.finish(900.0),
        flow,
    })
}

// Dialog, served end to end

pub const SCRIPT: [&str; 5] = [
    "I want a dress",
    "red please",
    "long sleeves please",
    "the second one",
    "yes, confirm the design",
];

/// Sends `turns` through the chat endpoint logic in one session and
/// returns (session id, phase after each turn).
pub fn run_script(state: &AppState, turns: &[&str]) -> Result<(String, Vec<Phase>)> {
    let mut session_id = None;
    let mut phases = Vec::new();
    for text in turns {
        let reply = state
            .chat(&ChatRequest {
                session_id: session_id.clone(),
                text: text.to_string(),
            })
            .with_context(|| format!("chat turn `{text}`"))?;
        session_id = Some(reply.session_id);
        phases.push(reply.phase);
    }
    Ok((session_id.unwrap_or_default(), phases))
}

fn random_frame(rng: &mut ChaCha8Rng, state: &AppState) -> IntentFrame {
    const INTENTS: [&str; 10] = [
        "greet",
        "request_item",
        "provide_attribute",
        "refine",
        "select_item",
        "edit_attribute",
        "confirm",
        "restart",
        "goodbye",
        "unknown",
    ];
    let vocab = state.policy().vocabulary();
    let entities = (0..rng.random_range(0..3))
        .map(|_| {
            let (entity, value) = match rng.random_range(0..10) {
                0..=1 => (
                    INDEX_REFERENCE.to_string(),
                    rng.random_range(0..9).to_string(),
                ),
                2 => ("fabric".to_string(), "silk".to_string()),
                _ => {
                    let spec = &vocab.attributes[rng.random_range(0..vocab.attributes.len())];
                    (
                        spec.slot.clone(),
                        spec.bins[rng.random_range(0..spec.bins.len())].clone(),
                    )
                }
            };
            ExtractedEntity {
                entity,
                value,
                start: 0,
                end: 1,
            }
        })
        .collect();
    IntentFrame {
        intent: INTENTS[rng.random_range(0..INTENTS.len())].to_string(),
        confidence: rng.random_range(0.0..1.0),
        entities,
        text: String::new(),
    }
}

/// Random frames against the policy with a retriever that sometimes fails
/// or comes back empty. Returns the number of invariant violations.
pub fn dialog_fuzz(state: &AppState, steps: usize, seed: u64) -> (usize, usize) {
    let policy = state.policy();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dialog = DialogState::new("fuzz");
    let mut violations = 0;
    let mut phases = std::collections::HashSet::new();
    for step in 0..steps as u64 {
        let frame = random_frame(&mut rng, state);
        let mode = rng.random_range(0..10);
        let n = rng.random_range(1..9u64);
        let mut retrieve = |_: &str, k: usize| match mode {
            0 => Err("offline".to_string()),
            1 => Ok(Vec::new()),
            _ => Ok((0..n.min(k as u64))
                .map(|i| ItemCard {
                    id: 100 * step + i,
                    caption: String::new(),
                    image: String::new(),
                })
                .collect()),
        };
        let (next, response) = policy.step(&dialog, &frame, &mut retrieve, state.k());
        let ok = policy.validate(&next).is_ok()
            && next.turn == dialog.turn + 1
            && next.candidates.len() <= state.k()
            && (!response.has_action(&Action::ShowResults) || !response.items.is_empty())
            && (!response.has_action(&Action::OpenEditor) || next.selected.is_some());
        violations += usize::from(!ok);
        phases.insert(next.phase);
        dialog = next;
    }
    (violations, phases.len())
}

pub fn dialog_criterion(state: &AppState) -> Result<Criterion> {
    let mut b = Builder::new("dialog");
    let (_, phases) = run_script(state, &SCRIPT)?;
    b.metric("script_turns", phases.len() as f64);
    let confirmed = phases.last() == Some(&Phase::Confirmed);
    b.metric("script_confirmed", f64::from(u8::from(confirmed)));
    let (violations, seen) = dialog_fuzz(state, 1000, 1234);
    b.metric("fuzz_steps", 1000.0);
    b.metric("fuzz_violations", violations as f64);
    b.metric("fuzz_phases_seen", seen as f64);
    b.require(confirmed, format!("script ended in {:?}", phases));
    b.require(violations == 0, "fuzz produced invalid states");
    Ok(b.finish(60.0))
}

/// Opens a design session by replaying the script up to the selection.
pub fn open_design(state: &AppState) -> Result<String> {
    let (id, phases) = run_script(state, &SCRIPT[..4])?;
    anyhow::ensure!(
        phases.last() == Some(&Phase::Designing),
        "script did not reach DESIGNING: {phases:?}"
    );
    Ok(id)
}

pub fn latency_criterion(state: &AppState, edits: usize) -> Result<Criterion> {
    let mut b = Builder::new("edit_latency");
    let session_id = open_design(state)?;
    let current = state
        .session(&session_id)
        .and_then(|s| s.workspace)
        .context("design session has no workspace")?;

    // Re-sending the current sliders must reproduce the current render.
    let again = state
        .edit(&EditRequest {
            session_id: session_id.clone(),
            attributes: TargetAttributes::List(current.attributes.values().to_vec()),
        })
        .map_err(anyhow::Error::new)?;
    let same = again.svg == render(&decode(&MixingMatrix::shipped(), &current.latent)).svg;
    b.metric("identity_svg_equal", f64::from(u8::from(same)));
    b.require(same, "identity edit changed the SVG");

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut latencies = Vec::with_capacity(edits);
    let mut target = current.attributes.values().to_vec();
    for _ in 0..edits {
        let i = rng.random_range(0..target.len());
        target[i] = rng.random_range(0.0..1.0);
        let reply = state
            .edit(&EditRequest {
                session_id: session_id.clone(),
                attributes: TargetAttributes::List(target.clone()),
            })
            .map_err(anyhow::Error::new)?;
        latencies.push(reply.latency_ms);
    }
    latencies.sort_by(f64::total_cmp);
    let p95 = latencies[((latencies.len() as f64 * 0.95).ceil() as usize).saturating_sub(1)];
    b.metric("edits", edits as f64);
    b.metric("p95_ms", p95);
    b.metric(
        "mean_ms",
        latencies.iter().sum::<f64>() / latencies.len() as f64,
    );
    b.metric("max_ms", *latencies.last().unwrap_or(&0.0));
    b.require(p95 < 50.0, "p95 edit latency not below 50 ms");
    Ok(b.finish(120.0))
}

pub fn merge_criterion(state: &AppState) -> Result<Criterion> {
    let mut b = Builder::new("merge_loop");
    let before = state.index_ids();
    let session_id = open_design(state)?;
    let committed = state
        .commit(&CommitRequest { session_id })
        .map_err(anyhow::Error::new)?;
    let embedding = state
        .embedding(committed.item_id)
        .context("committed item not indexed")?;
    let top = state
        .search_vector(&embedding, 1)
        .map_err(anyhow::Error::new)?;
    let rank1 = top.first().is_some_and(|h| h.id == committed.item_id);
    let score = top.first().map_or(f64::NAN, |h| h.score);
    b.metric("new_item_rank1", f64::from(u8::from(rank1)));
    b.metric("new_item_score", score);
    b.require(rank1, "committed item is not rank 1 for its own embedding");
    b.require(
        (score - 1.0).abs() <= 1e-6,
        "self score not within 1e-6 of 1",
    );

    let mut found = 0usize;
    for id in &before {
        let v = state.embedding(*id).context("pre-existing item vanished")?;
        let hits = state.search_vector(&v, 1).map_err(anyhow::Error::new)?;
        found += usize::from(
            hits.first()
                .is_some_and(|h| h.id == *id || h.score >= 1.0 - 1e-12),
        );
    }
    b.metric("pre_existing", before.len() as f64);
    b.metric("pre_existing_found", found as f64);
    b.require(
        found == before.len(),
        "some pre-existing items are no longer retrievable",
    );
    Ok(b.finish(120.0))
}

// Persistence

fn probe_outputs(models: &Models) -> Result<Vec<u64>> {
    let mut out = Vec::new();
    for text in SCRIPT.iter().chain(&[
        "start over",
        "make the sleeves short",
        "hello there",
        "goodbye",
    ]) {
        let f = classify(&models.intent, text)?;
        out.push(stylechat_core::text::fnv1a64(f.intent.as_bytes()));
        out.push(f.confidence.to_bits());
        for e in extract_entities(&models.lexicon, text) {
            out.push(stylechat_core::text::fnv1a64(
                format!("{}={}@{}", e.entity, e.value, e.start).as_bytes(),
            ));
        }
    }
    for caption in models
        .catalog
        .iter()
        .step_by(97)
        .map(|c| c.caption.as_str())
    {
        let q = models.encoders.text.encode(caption)?;
        for hit in models.index.search(&q, 5)? {
            out.push(hit.id);
            out.push(hit.score.to_bits());
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    for item in models.catalog.iter().step_by(211) {
        let target: [f64; 6] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
        let target = AttributeVector::new(target)?;
        let w = models.flow.edit(&item.latent, &item.attributes, &target)?;
        out.extend(w.0.iter().map(|x| x.to_bits()));
    }
    Ok(out)
}

pub fn persistence_criterion(config: &ServiceConfig, models: &Models) -> Result<Criterion> {
    let mut b = Builder::new("persistence");
    let dir = tempfile::tempdir()?;
    let mut on_disk = config.clone();
    on_disk.data_dir = dir.path().to_path_buf();
    models.save(&on_disk)?;
    let loaded = Models::load(&on_disk)?;
    let before = probe_outputs(models)?;
    let after = probe_outputs(&loaded)?;
    let equal = before == after;
    b.metric("probe_values", before.len() as f64);
    b.metric("bit_identical", f64::from(u8::from(equal)));
    b.require(equal, "reloaded models disagree with the originals");
    Ok(b.finish(60.0))
}

/// Trains everything from `config` and scores every acceptance criterion.
pub fn run(config: &ServiceConfig) -> Result<EvalReport> {
    let start = Instant::now();
    let mut criteria = vec![grammar_criterion(20)];

    let nlu = nlu_criterion(config)?;
    criteria.push(nlu.criterion);

    let vocab = pipeline::load_vocabulary(config)?;
    let catalog = pipeline::catalog(config, &vocab);
    let retrieval = retrieval_criterion(config, &catalog)?;
    criteria.push(retrieval.criterion);

    let mixing = MixingMatrix::shipped();
    let flow = flow_criterion(config, &mixing)?;
    criteria.push(flow.criterion);

    let index = pipeline::build_index(config, &retrieval.encoders, &catalog)?;
    let grammar = pipeline::load_grammar(config)?;
    let models = Models {
        policy: pipeline::load_policy(config)?,
        intent: nlu.model,
        lexicon: EntityLexicon::from_grammar(&grammar)?,
        encoders: retrieval.encoders,
        flow: flow.flow,
        mixing,
        catalog,
        index,
    };
    models.check()?;
    criteria.push(persistence_criterion(config, &models)?);

    let state = Arc::new(AppState::new(models, config.k, None));
    criteria.push(dialog_criterion(&state)?);
    criteria.push(latency_criterion(&state, 500)?);
    criteria.push(merge_criterion(&state)?);

    Ok(EvalReport {
        criteria,
        total_seconds: start.elapsed().as_secs_f64(),
    })
}
