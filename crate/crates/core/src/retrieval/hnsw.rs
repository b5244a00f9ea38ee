//! Hierarchical navigable small world graph over unit vectors, scored by
//! cosine similarity.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use super::dot;
use crate::garment::ItemId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HnswParams {
    /// Links per node on upper layers.
    pub m: usize,
    /// Links per node on layer 0.
    pub m0: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    /// Seeds the per-insertion level draw.
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            m0: 32,
            ef_construction: 200,
            ef_search: 96,
            seed: 0x686e_7377,
        }
    }
}

const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Node {
    pub id: ItemId,
    pub vector: Vec<f64>,
    /// `links[layer]` holds neighbor node indices.
    pub links: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnswIndex {
    pub(crate) params: HnswParams,
    pub(crate) dim: usize,
    pub(crate) nodes: Vec<Node>,
    pub(crate) by_id: HashMap<ItemId, u32>,
    pub(crate) entry: Option<u32>,
}

/// A node scored against the current query. Ordered by similarity, then by
/// lower item id, so "greater" always means "better".
#[derive(Debug, Clone, Copy)]
struct Scored {
    sim: f64,
    id: ItemId,
    node: u32,
}

impl PartialEq for Scored {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scored {}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then_with(|| other.id.cmp(&self.id))
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

impl HnswIndex {
    pub fn new(dim: usize, params: HnswParams) -> Self {
        assert!(
            params.m >= 2 && params.m0 >= params.m,
            "invalid HNSW link counts"
        );
        Self {
            params,
            dim,
            nodes: Vec::new(),
            by_id: HashMap::new(),
            entry: None,
        }
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, id: ItemId) -> Option<&[f64]> {
        self.by_id
            .get(&id)
            .map(|&n| self.nodes[n as usize].vector.as_slice())
    }

    pub fn ids(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.nodes.iter().map(|n| n.id)
    }

    /// Level for the `ordinal`-th insertion; a pure function of the seed.
    fn level_for(&self, ordinal: usize) -> usize {
        let h = splitmix64(self.params.seed ^ splitmix64(ordinal as u64));
        let u = ((h >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
        let ml = 1.0 / (self.params.m as f64).ln();
        ((-u.ln() * ml).floor() as usize).min(MAX_LEVEL)
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            self.params.m0
        } else {
            self.params.m
        }
    }

    fn level_of(&self, node: u32) -> usize {
        self.nodes[node as usize].links.len() - 1
    }

    fn scored(&self, query: &[f64], node: u32) -> Scored {
        let n = &self.nodes[node as usize];
        Scored {
            sim: dot(query, &n.vector),
            id: n.id,
            node,
        }
    }

    /// Best-first beam search on one layer. Returns up to `ef` nodes, best
    /// first.
    fn search_layer(
        &self,
        query: &[f64],
        entries: &[Scored],
        ef: usize,
        layer: usize,
    ) -> Vec<Scored> {
        let mut visited = vec![false; self.nodes.len()];
        let mut candidates: BinaryHeap<Scored> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        for &e in entries {
            if !visited[e.node as usize] {
                visited[e.node as usize] = true;
                candidates.push(e);
                results.push(Reverse(e));
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(c) = candidates.pop() {
            let worst = results.peek().expect("results non-empty").0;
            if c < worst && results.len() >= ef {
                break;
            }
            for &nb in &self.nodes[c.node as usize].links[layer] {
                if visited[nb as usize] {
                    continue;
                }
                visited[nb as usize] = true;
                let s = self.scored(query, nb);
                let worst = results.peek().expect("results non-empty").0;
                if results.len() < ef || s > worst {
                    candidates.push(s);
                    results.push(Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the
    /// base than to every neighbor kept so far, then top up with the
    /// discarded ones in score order.
    fn select_neighbors(&self, candidates: &[Scored], m: usize) -> Vec<u32> {
        let mut kept: Vec<Scored> = Vec::with_capacity(m);
        let mut discarded = Vec::new();
        for &c in candidates {
            if kept.len() >= m {
                break;
            }
            let cv = &self.nodes[c.node as usize].vector;
            let diverse = kept
                .iter()
                .all(|k| dot(cv, &self.nodes[k.node as usize].vector) < c.sim);
            if diverse {
                kept.push(c);
            } else {
                discarded.push(c);
            }
        }
        for c in discarded {
            if kept.len() >= m {
                break;
            }
            kept.push(c);
        }
        kept.into_iter().map(|s| s.node).collect()
    }

    /// Inserts a vector. The caller guarantees the id is new and the vector
    /// has the index dimension. On layer 0 the new node takes up to `m0`
    /// neighbors, elsewhere `m`.
    pub(crate) fn insert(&mut self, id: ItemId, vector: Vec<f64>) {
        let node = self.nodes.len() as u32;
        let level = self.level_for(node as usize);
        self.nodes.push(Node {
            id,
            vector,
            links: vec![Vec::new(); level + 1],
        });
        self.by_id.insert(id, node);
        let Some(entry) = self.entry else {
            self.entry = Some(node);
            return;
        };

        let query = self.nodes[node as usize].vector.clone();
        let top = self.level_of(entry);
        let mut eps = vec![self.scored(&query, entry)];
        for layer in (level + 1..=top).rev() {
            eps = self.search_layer(&query, &eps, 1, layer);
        }
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(&query, &eps, self.params.ef_construction, layer);
            let neighbors = self.select_neighbors(&found, self.max_links(layer));
            self.nodes[node as usize].links[layer] = neighbors.clone();
            for nb in neighbors {
                self.nodes[nb as usize].links[layer].push(node);
                if self.nodes[nb as usize].links[layer].len() > self.max_links(layer) {
                    self.shrink(nb, layer);
                }
            }
            eps = found;
        }
        if level > top {
            self.entry = Some(node);
        }
    }

    fn shrink(&mut self, node: u32, layer: usize) {
        let base = self.nodes[node as usize].vector.clone();
        let mut scored: Vec<Scored> = self.nodes[node as usize].links[layer]
            .iter()
            .map(|&nb| self.scored(&base, nb))
            .collect();
        scored.sort_by(|a, b| b.cmp(a));
        let kept = self.select_neighbors(&scored, self.max_links(layer));
        self.nodes[node as usize].links[layer] = kept;
    }

    /// Approximate top-`k` by cosine, best first. Returns `(id, score)`.
    pub(crate) fn search(&self, query: &[f64], k: usize) -> Vec<(ItemId, f64)> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        let mut eps = vec![self.scored(query, entry)];
        for layer in (1..=self.level_of(entry)).rev() {
            eps = self.search_layer(query, &eps, 1, layer);
        }
        let ef = self.params.ef_search.max(k);
        let mut found = self.search_layer(query, &eps, ef, 0);
        found.truncate(k);
        found.into_iter().map(|s| (s.id, s.sim)).collect()
    }

    /// Every node appears on layer 0 and links stay within bounds.
    pub fn check_structure(&self) -> Result<(), String> {
        for (i, n) in self.nodes.iter().enumerate() {
            if n.links.is_empty() {
                return Err(format!("node {i} has no layer 0"));
            }
            for (layer, links) in n.links.iter().enumerate() {
                if links.len() > self.max_links(layer) {
                    return Err(format!(
                        "node {i} has {} links on layer {layer}",
                        links.len()
                    ));
                }
                for &nb in links {
                    let other = self
                        .nodes
                        .get(nb as usize)
                        .ok_or(format!("dangling link from {i}"))?;
                    if other.links.len() <= layer || nb as usize == i {
                        return Err(format!("node {i} links to {nb} on layer {layer}"));
                    }
                }
            }
        }
        if self.nodes.len() > 1 && self.nodes.iter().any(|n| n.links[0].is_empty()) {
            return Err("isolated node on layer 0".into());
        }
        Ok(())
    }
}
