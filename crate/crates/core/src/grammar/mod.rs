//! Template DSL for synthesizing labeled NLU training data.
//!
//! A grammar file declares three kinds of blocks, each followed by variant
//! lines indented with four spaces:
//!
//! ```text
//! %[request_item]
//!     ~[greet?] I want a @[color] dress
//!
//! ~[greet]
//!     hi
//!     hello
//!
//! @[color]
//!     red
//!     crimson => red
//! ```
//!
//! `%[..]` is an intent, `~[..]` an alias (literal variants), `@[..]` an entity
//! whose variants are `surface` or `surface => canonical`. A `?` suffix on a
//! reference makes it optional. Lines starting with `#` are comments.

mod expand;
mod parse;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use expand::{expand, expansion_count, DEFAULT_CAP_PER_INTENT};
pub use parse::parse_grammar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Position {
    pub line: usize,
    pub column: usize,
}

impl std::fmt::Display for Position {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GrammarError {
    #[error("syntax error at {pos}: {message}")]
    Syntax { pos: Position, message: String },
    #[error("unresolved {kind} reference `{name}` at {pos}")]
    UnresolvedReference {
        kind: RefKind,
        name: String,
        pos: Position,
    },
    #[error("duplicate intent `{name}` at {pos}")]
    DuplicateIntent { name: String, pos: Position },
    #[error("intent `{name}` declared at {pos} has no templates")]
    EmptyIntent { name: String, pos: Position },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefKind {
    Alias,
    Entity,
}

impl std::fmt::Display for RefKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RefKind::Alias => "alias",
            RefKind::Entity => "entity",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TemplateToken {
    Literal(String),
    Alias { name: String, optional: bool },
    Entity { name: String, optional: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    pub tokens: Vec<TemplateToken>,
    pub pos: Position,
}

impl Template {
    pub fn refs(&self) -> impl Iterator<Item = &TemplateToken> {
        self.tokens
            .iter()
            .filter(|t| !matches!(t, TemplateToken::Literal(_)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntentBlock {
    pub name: String,
    pub templates: Vec<Template>,
    pub pos: Position,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntityValue {
    pub surface: String,
    pub canonical: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GrammarFile {
    pub intents: Vec<IntentBlock>,
    pub aliases: BTreeMap<String, Vec<String>>,
    pub entities: BTreeMap<String, Vec<EntityValue>>,
}

impl GrammarFile {
    pub fn intent_names(&self) -> Vec<&str> {
        self.intents.iter().map(|i| i.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub entity: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub text: String,
    pub intent: String,
    pub entities: Vec<EntitySpan>,
}

/// Serializes examples as JSON lines.
pub fn to_jsonl(examples: &[TrainingExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        out.push_str(&serde_json::to_string(ex).expect("example serializes"));
        out.push('\n');
    }
    out
}

pub fn from_jsonl(text: &str) -> Result<Vec<TrainingExample>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// The fashion grammar that ships with the crate.
pub const FASHION_GRAMMAR: &str = include_str!("../../data/fashion.grammar");
