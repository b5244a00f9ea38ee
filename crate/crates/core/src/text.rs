//! Tokenization and hashed n-gram features shared by the intent classifier
//! and the caption encoder.

use serde::{Deserialize, Serialize};

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |hash, &b| {
        (hash ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// A lowercase token together with the byte span it occupies in the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Splits on every non-alphanumeric character and lowercases what remains.
/// Punctuation never survives, so `"Elbow-length!"` yields `elbow`, `length`.
pub fn tokenize_with_spans(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        if ch.is_alphanumeric() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            tokens.push(Token {
                text: text[s..i].to_lowercase(),
                start: s,
                end: i,
            });
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: text[s..].to_lowercase(),
            start: s,
            end: text.len(),
        });
    }
    tokens
}

pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_with_spans(text)
        .into_iter()
        .map(|t| t.text)
        .collect()
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    pub entries: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, index: u32) -> f64 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0.0)
    }

    fn from_unsorted(mut raw: Vec<u32>) -> Self {
        raw.sort_unstable();
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(raw.len());
        for idx in raw {
            match entries.last_mut() {
                Some((last, count)) if *last == idx => *count += 1.0,
                _ => entries.push((idx, 1.0)),
            }
        }
        Self { entries }
    }
}

/// Hashing featurizer over unigrams and bigrams.
///
/// Bigrams are hashed as the two tokens joined by a single space, which can
/// never collide with a unigram string because tokens contain no spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashingFeaturizer {
    pub bucket_bits: u32,
    pub max_order: u32,
}

impl HashingFeaturizer {
    /// 2^15 buckets, orders {1, 2}: the intent classifier configuration.
    pub const INTENT: Self = Self {
        bucket_bits: 15,
        max_order: 2,
    };
    /// 2^12 buckets, orders {1, 2}: the caption encoder configuration.
    pub const CAPTION: Self = Self {
        bucket_bits: 12,
        max_order: 2,
    };

    pub fn new(bucket_bits: u32, max_order: u32) -> Self {
        assert!((1..=31).contains(&bucket_bits), "bucket_bits out of range");
        assert!(max_order >= 1, "max_order must be at least 1");
        Self {
            bucket_bits,
            max_order,
        }
    }

    pub fn buckets(&self) -> usize {
        1usize << self.bucket_bits
    }

    pub fn bucket_of(&self, gram: &str) -> u32 {
        (fnv1a64(gram.as_bytes()) & ((1u64 << self.bucket_bits) - 1)) as u32
    }

    pub fn featurize(&self, text: &str) -> SparseVector {
        let tokens = tokenize(text);
        let mut raw = Vec::new();
        for order in 1..=self.max_order as usize {
            for window in tokens.windows(order) {
                raw.push(self.bucket_of(&window.join(" ")));
            }
        }
        SparseVector::from_unsorted(raw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn tokenizer_strips_punctuation_and_case() {
        let toks = tokenize_with_spans("  Hi, I'd like ELBOW-length!");
        let words: Vec<_> = toks.iter().map(|t| t.text.as_str()).collect();
        assert_eq!(words, ["hi", "i", "d", "like", "elbow", "length"]);
        assert_eq!(
            &"  Hi, I'd like ELBOW-length!"[toks[4].start..toks[4].end],
            "ELBOW"
        );
    }

    #[test]
    fn empty_text_is_zero_vector() {
        assert!(HashingFeaturizer::INTENT.featurize("").is_empty());
        assert!(HashingFeaturizer::INTENT.featurize(" ?! ").is_empty());
    }

    #[test]
    fn counts_accumulate() {
        let f = HashingFeaturizer::INTENT;
        let v = f.featurize("red red");
        assert_eq!(v.get(f.bucket_of("red")), 2.0);
        assert_eq!(v.get(f.bucket_of("red red")), 1.0);
    }
}
