use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::hnsw::{HnswIndex, HnswParams, Node};
use super::{dot, norm, RetrievalError, NORM_TOLERANCE};
use crate::codec::{CodecError, Reader, Writer};
use crate::garment::ItemId;

const MAGIC: &[u8; 4] = b"VIX1";
const VARIANT_EXACT: u8 = 0;
const VARIANT_HNSW: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub id: ItemId,
    pub score: f64,
}

/// Brute-force cosine scan. The reference every other index is checked
/// against.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExactIndex {
    dim: usize,
    ids: Vec<ItemId>,
    vectors: Vec<Vec<f64>>,
    by_id: HashMap<ItemId, usize>,
}

impl ExactIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    fn insert(&mut self, id: ItemId, vector: Vec<f64>) {
        self.by_id.insert(id, self.ids.len());
        self.ids.push(id);
        self.vectors.push(vector);
    }

    fn search(&self, query: &[f64], k: usize) -> Vec<(ItemId, f64)> {
        let mut scored: Vec<(ItemId, f64)> = self
            .ids
            .iter()
            .zip(&self.vectors)
            .map(|(&id, v)| (id, dot(query, v)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VectorIndex {
    Exact(ExactIndex),
    Hnsw(HnswIndex),
}

impl VectorIndex {
    pub fn exact(dim: usize) -> Self {
        VectorIndex::Exact(ExactIndex::new(dim))
    }

    pub fn hnsw(dim: usize, params: HnswParams) -> Self {
        VectorIndex::Hnsw(HnswIndex::new(dim, params))
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorIndex::Exact(e) => e.dim,
            VectorIndex::Hnsw(h) => h.dim,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            VectorIndex::Exact(e) => e.ids.len(),
            VectorIndex::Hnsw(h) => h.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: ItemId) -> bool {
        self.get(id).is_some()
    }

    pub fn get(&self, id: ItemId) -> Option<&[f64]> {
        match self {
            VectorIndex::Exact(e) => e.by_id.get(&id).map(|&i| e.vectors[i].as_slice()),
            VectorIndex::Hnsw(h) => h.get(id),
        }
    }

    /// Ids in insertion order.
    pub fn ids(&self) -> Vec<ItemId> {
        match self {
            VectorIndex::Exact(e) => e.ids.clone(),
            VectorIndex::Hnsw(h) => h.ids().collect(),
        }
    }

    pub fn max_id(&self) -> Option<ItemId> {
        self.ids().into_iter().max()
    }

    /// Top-`k` by cosine, best first, ties by ascending id. Scores are
    /// clamped to `[-1, 1]`.
    pub fn search(&self, query: &[f64], k: usize) -> Result<Vec<SearchHit>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        if self.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        if query.len() != self.dim() {
            return Err(RetrievalError::DimensionMismatch {
                expected: self.dim(),
                got: query.len(),
            });
        }
        let raw = match self {
            VectorIndex::Exact(e) => e.search(query, k),
            VectorIndex::Hnsw(h) => h.search(query, k),
        };
        Ok(raw
            .into_iter()
            .map(|(id, s)| SearchHit {
                id,
                score: s.clamp(-1.0, 1.0),
            })
            .collect())
    }

    /// Adds new entries. Everything is validated first, so on error the
    /// index is unchanged.
    pub fn merge(&mut self, entries: Vec<(ItemId, Vec<f64>)>) -> Result<(), RetrievalError> {
        let mut fresh = std::collections::HashSet::new();
        for (id, v) in &entries {
            if self.contains(*id) || !fresh.insert(*id) {
                return Err(RetrievalError::DuplicateId(*id));
            }
            if v.len() != self.dim() {
                return Err(RetrievalError::DimensionMismatch {
                    expected: self.dim(),
                    got: v.len(),
                });
            }
            let n = norm(v);
            if !n.is_finite() || (n - 1.0).abs() > NORM_TOLERANCE {
                return Err(RetrievalError::NotNormalized { id: *id, norm: n });
            }
        }
        for (id, v) in entries {
            match self {
                VectorIndex::Exact(e) => e.insert(id, v),
                VectorIndex::Hnsw(h) => h.insert(id, v),
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(MAGIC);
        let variant = match self {
            VectorIndex::Exact(_) => VARIANT_EXACT,
            VectorIndex::Hnsw(_) => VARIANT_HNSW,
        };
        w.u8(variant).u32(self.dim() as u32).u64(self.len() as u64);
        match self {
            VectorIndex::Exact(e) => {
                for (id, v) in e.ids.iter().zip(&e.vectors) {
                    w.u64(*id).f64s(v);
                }
            }
            VectorIndex::Hnsw(h) => {
                for n in &h.nodes {
                    w.u64(n.id).f64s(&n.vector);
                }
                let p = h.params;
                w.u32(p.m as u32)
                    .u32(p.m0 as u32)
                    .u32(p.ef_construction as u32)
                    .u32(p.ef_search as u32)
                    .u64(p.seed)
                    .u32(h.entry.map_or(u32::MAX, |e| e));
                for n in &h.nodes {
                    w.u32(n.links.len() as u32);
                    for layer in &n.links {
                        w.u32(layer.len() as u32);
                        for &nb in layer {
                            w.u32(nb);
                        }
                    }
                }
            }
        }
        w.into_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RetrievalError> {
        let invalid = |m: &str| RetrievalError::Codec(CodecError::Invalid(m.to_string()));
        let mut r = Reader::with_magic(bytes, MAGIC)?;
        let variant = r.u8("variant")?;
        let dim = r.u32("dimension")? as usize;
        let count = r.u64("count")? as usize;
        if dim == 0 {
            return Err(invalid("zero dimension"));
        }
        if count > bytes.len() / (8 * dim + 8) {
            return Err(invalid("count exceeds file size"));
        }
        let mut records = Vec::with_capacity(count);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..count {
            let id = r.u64("item id")?;
            let v = r.f64s(dim, "vector")?;
            if !seen.insert(id) {
                return Err(RetrievalError::DuplicateId(id));
            }
            records.push((id, v));
        }
        let index = match variant {
            VARIANT_EXACT => {
                let mut e = ExactIndex::new(dim);
                for (id, v) in records {
                    e.insert(id, v);
                }
                VectorIndex::Exact(e)
            }
            VARIANT_HNSW => {
                let params = HnswParams {
                    m: r.u32("m")? as usize,
                    m0: r.u32("m0")? as usize,
                    ef_construction: r.u32("ef construction")? as usize,
                    ef_search: r.u32("ef search")? as usize,
                    seed: r.u64("seed")?,
                };
                if params.m < 2 || params.m0 < params.m {
                    return Err(invalid("bad HNSW link counts"));
                }
                let entry = r.u32("entry point")?;
                let mut h = HnswIndex::new(dim, params);
                h.entry = if entry == u32::MAX { None } else { Some(entry) };
                for (i, (id, vector)) in records.into_iter().enumerate() {
                    let layers = r.u32("layer count")? as usize;
                    if layers == 0 || layers > 64 {
                        return Err(invalid("bad layer count"));
                    }
                    let mut links = Vec::with_capacity(layers);
                    for _ in 0..layers {
                        let n = r.u32("link count")? as usize;
                        if n > count {
                            return Err(invalid("link count exceeds node count"));
                        }
                        let mut layer = Vec::with_capacity(n);
                        for _ in 0..n {
                            layer.push(r.u32("link")?);
                        }
                        links.push(layer);
                    }
                    h.by_id.insert(id, i as u32);
                    h.nodes.push(Node { id, vector, links });
                }
                if h.entry.is_some_and(|e| e as usize >= count) || (h.entry.is_none() && count > 0)
                {
                    return Err(invalid("bad entry point"));
                }
                h.check_structure().map_err(|m| invalid(&m))?;
                VectorIndex::Hnsw(h)
            }
            other => return Err(invalid(&format!("unknown index variant {other}"))),
        };
        r.finish()?;
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(a: f64) -> Vec<f64> {
        vec![a.cos(), a.sin()]
    }

    #[test]
    fn single_item_always_returned() {
        for mut idx in [
            VectorIndex::exact(2),
            VectorIndex::hnsw(2, HnswParams::default()),
        ] {
            idx.merge(vec![(7, unit(0.3))]).unwrap();
            assert_eq!(idx.len(), 1);
            let hits = idx.search(&unit(2.0), 5).unwrap();
            assert_eq!(hits.len(), 1);
            assert_eq!(hits[0].id, 7);
        }
    }

    #[test]
    fn errors() {
        let mut idx = VectorIndex::exact(2);
        assert!(matches!(
            idx.search(&unit(0.0), 1),
            Err(RetrievalError::EmptyIndex)
        ));
        idx.merge(vec![(1, unit(0.0))]).unwrap();
        assert!(matches!(
            idx.search(&unit(0.0), 0),
            Err(RetrievalError::InvalidK)
        ));
        assert!(matches!(
            idx.search(&[1.0], 1),
            Err(RetrievalError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            idx.merge(vec![(2, unit(1.0)), (1, unit(0.5))]),
            Err(RetrievalError::DuplicateId(1))
        ));
        assert_eq!(idx.len(), 1);
        assert!(matches!(
            idx.merge(vec![(3, vec![1.0, 1.0])]),
            Err(RetrievalError::NotNormalized { id: 3, .. })
        ));
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let mut idx = VectorIndex::exact(2);
        idx.merge(vec![(9, unit(0.0)), (4, unit(0.0)), (6, unit(0.0))])
            .unwrap();
        let ids: Vec<_> = idx
            .search(&unit(0.0), 3)
            .unwrap()
            .iter()
            .map(|h| h.id)
            .collect();
        assert_eq!(ids, [4, 6, 9]);
    }

    #[test]
    fn bytes_round_trip_both_variants() {
        for mut idx in [
            VectorIndex::exact(2),
            VectorIndex::hnsw(2, HnswParams::default()),
        ] {
            idx.merge((0..40).map(|i| (i * 3, unit(i as f64 * 0.15))).collect())
                .unwrap();
            let bytes = idx.to_bytes();
            let back = VectorIndex::from_bytes(&bytes).unwrap();
            assert_eq!(back, idx);
            assert!(VectorIndex::from_bytes(&bytes[..bytes.len() - 2]).is_err());
        }
    }
}
