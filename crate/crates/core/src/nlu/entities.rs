use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::{ExtractedEntity, NluError};
use crate::grammar::GrammarFile;
use crate::text::{tokenize, tokenize_with_spans};

/// Entity name emitted for ordinal references ("the second one").
pub const INDEX_REFERENCE: &str = "index_reference";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub tokens: Vec<String>,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrdinalEntry {
    pub tokens: Vec<String>,
    pub index: u32,
}

/// Gazetteer of lowercase surface forms mapped to canonical values.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EntityLexicon {
    pub entities: BTreeMap<String, Vec<LexiconEntry>>,
    pub ordinals: Vec<OrdinalEntry>,
}

const ORDINAL_WORDS: [&str; 10] = [
    "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth",
];

fn default_ordinals() -> Vec<OrdinalEntry> {
    let mut out = Vec::new();
    for (i, word) in ORDINAL_WORDS.iter().enumerate() {
        let n = i as u32 + 1;
        let suffix = match n {
            1 => "st",
            2 => "nd",
            3 => "rd",
            _ => "th",
        };
        out.push(OrdinalEntry {
            tokens: vec![word.to_string()],
            index: n,
        });
        out.push(OrdinalEntry {
            tokens: vec![format!("{n}{suffix}")],
            index: n,
        });
    }
    out
}

impl EntityLexicon {
    /// Builds the gazetteer from a grammar's entity blocks. The
    /// `index_reference` block, if present, is merged into the ordinal table.
    pub fn from_grammar(grammar: &GrammarFile) -> Result<Self, NluError> {
        let mut lexicon = Self {
            entities: BTreeMap::new(),
            ordinals: default_ordinals(),
        };
        for (name, values) in &grammar.entities {
            for v in values {
                let tokens = tokenize(&v.surface);
                if tokens.is_empty() {
                    return Err(NluError::Lexicon(format!(
                        "surface `{}` of `{name}` has no tokens",
                        v.surface
                    )));
                }
                if name == INDEX_REFERENCE {
                    let index = v.canonical.parse::<u32>().map_err(|_| {
                        NluError::Lexicon(format!(
                            "ordinal value `{}` is not a number",
                            v.canonical
                        ))
                    })?;
                    if !lexicon.ordinals.iter().any(|o| o.tokens == tokens) {
                        lexicon.ordinals.push(OrdinalEntry { tokens, index });
                    }
                    continue;
                }
                let entries = lexicon.entities.entry(name.clone()).or_default();
                if !entries.iter().any(|e| e.tokens == tokens) {
                    entries.push(LexiconEntry {
                        tokens,
                        value: v.canonical.clone(),
                    });
                }
            }
        }
        Ok(lexicon)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("lexicon serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NluError> {
        let lexicon: Self =
            serde_json::from_str(text).map_err(|e| NluError::Lexicon(e.to_string()))?;
        let all_tokens = lexicon
            .entities
            .values()
            .flatten()
            .map(|e| &e.tokens)
            .chain(lexicon.ordinals.iter().map(|o| &o.tokens));
        for tokens in all_tokens {
            if tokens.is_empty()
                || tokens
                    .iter()
                    .any(|t| t.is_empty() || *t != t.to_lowercase())
            {
                return Err(NluError::Lexicon(format!("bad surface form {tokens:?}")));
            }
        }
        Ok(lexicon)
    }

    /// Surface → (entity, value) table; earlier entries win on duplicates.
    fn table(&self) -> (HashMap<&[String], (&str, String)>, usize) {
        let mut table: HashMap<&[String], (&str, String)> = HashMap::new();
        let mut longest = 0;
        for (name, entries) in &self.entities {
            for e in entries {
                longest = longest.max(e.tokens.len());
                table
                    .entry(e.tokens.as_slice())
                    .or_insert_with(|| (name.as_str(), e.value.clone()));
            }
        }
        for o in &self.ordinals {
            longest = longest.max(o.tokens.len());
            table
                .entry(o.tokens.as_slice())
                .or_insert_with(|| (INDEX_REFERENCE, o.index.to_string()));
        }
        (table, longest)
    }
}

/// Greedy leftmost-longest gazetteer match. Matched tokens are consumed, so
/// spans never overlap.
pub fn extract_entities(lexicon: &EntityLexicon, text: &str) -> Vec<ExtractedEntity> {
    let tokens = tokenize_with_spans(text);
    let words: Vec<String> = tokens.iter().map(|t| t.text.clone()).collect();
    let (table, longest) = lexicon.table();
    let mut out = Vec::new();
    let mut i = 0;
    while i < words.len() {
        let max_len = longest.min(words.len() - i);
        let hit = (1..=max_len)
            .rev()
            .find_map(|len| table.get(&words[i..i + len]).map(|hit| (len, hit)));
        match hit {
            Some((len, (entity, value))) => {
                out.push(ExtractedEntity {
                    entity: entity.to_string(),
                    value: value.clone(),
                    start: tokens[i].start,
                    end: tokens[i + len - 1].end,
                });
                i += len;
            }
            None => i += 1,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{parse_grammar, FASHION_GRAMMAR};

    fn shipped() -> EntityLexicon {
        EntityLexicon::from_grammar(&parse_grammar(FASHION_GRAMMAR).unwrap()).unwrap()
    }

    fn pairs(found: &[ExtractedEntity]) -> Vec<(&str, &str)> {
        found
            .iter()
            .map(|e| (e.entity.as_str(), e.value.as_str()))
            .collect()
    }

    #[test]
    fn color_and_sleeves() {
        let found = extract_entities(&shipped(), "a red dress with long sleeves");
        assert_eq!(pairs(&found), [("color", "red"), ("sleeve_length", "long")]);
        assert_eq!((found[0].start, found[0].end), (2, 5));
    }

    #[test]
    fn longest_match_wins() {
        let src = "%[a]\n    @[color] dress\n@[color]\n    blue\n    navy blue\n";
        let lex = EntityLexicon::from_grammar(&parse_grammar(src).unwrap()).unwrap();
        let found = extract_entities(&lex, "navy blue dress");
        assert_eq!(pairs(&found), [("color", "navy blue")]);
        assert_eq!((found[0].start, found[0].end), (0, 9));
    }

    #[test]
    fn ordinal_reference() {
        let found = extract_entities(&shipped(), "show me the second one");
        assert_eq!(pairs(&found), [(INDEX_REFERENCE, "2")]);
        let found = extract_entities(&shipped(), "the 3rd please");
        assert_eq!(pairs(&found), [(INDEX_REFERENCE, "3")]);
    }

    #[test]
    fn synonyms_and_case() {
        let found = extract_entities(
            &shipped(),
            "Something in NAVY BLUE with Elbow-Length sleeves",
        );
        assert_eq!(
            pairs(&found),
            [("color", "blue"), ("sleeve_length", "elbow-length")]
        );
    }

    #[test]
    fn json_round_trip_and_validation() {
        let lex = shipped();
        assert_eq!(EntityLexicon::from_json(&lex.to_json()).unwrap(), lex);
        let bad = r#"{"entities":{"color":[{"tokens":["Red"],"value":"red"}]},"ordinals":[]}"#;
        assert!(EntityLexicon::from_json(bad).is_err());
    }
}
