use std::collections::HashMap;
use std::num::NonZeroUsize;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EntitySpan, GrammarFile, IntentBlock, Template, TemplateToken, TrainingExample};
use crate::text::fnv1a64;

pub const DEFAULT_CAP_PER_INTENT: NonZeroUsize = match NonZeroUsize::new(10_000) {
    Some(n) => n,
    None => unreachable!(),
};

/// Number of branches each reference of `template` contributes.
fn radices(grammar: &GrammarFile, template: &Template) -> Vec<u128> {
    template
        .refs()
        .map(|token| {
            let (variants, optional) = match token {
                TemplateToken::Alias { name, optional } => (grammar.aliases[name].len(), *optional),
                TemplateToken::Entity { name, optional } => {
                    (grammar.entities[name].len(), *optional)
                }
                TemplateToken::Literal(_) => unreachable!("refs() skips literals"),
            };
            variants as u128 + u128::from(optional)
        })
        .collect()
}

fn template_count(grammar: &GrammarFile, template: &Template) -> u128 {
    radices(grammar, template)
        .into_iter()
        .fold(1u128, |acc, r| acc.saturating_mul(r))
}

/// Total number of distinct expansions of `intent` without a cap.
pub fn expansion_count(grammar: &GrammarFile, intent: &IntentBlock) -> u128 {
    intent
        .templates
        .iter()
        .map(|t| template_count(grammar, t))
        .fold(0u128, |acc, c| acc.saturating_add(c))
}

/// Builds a whitespace-normalized utterance from raw pieces, tracking where
/// entity substitutions land in the final string.
struct Assembler {
    text: String,
    pending_space: bool,
    entities: Vec<EntitySpan>,
}

impl Assembler {
    fn new() -> Self {
        Self {
            text: String::new(),
            pending_space: false,
            entities: Vec::new(),
        }
    }

    fn push(&mut self, piece: &str) {
        for ch in piece.chars() {
            if ch.is_whitespace() {
                self.pending_space = !self.text.is_empty();
            } else {
                if self.pending_space {
                    self.text.push(' ');
                    self.pending_space = false;
                }
                self.text.push(ch);
            }
        }
    }

    fn push_entity(&mut self, entity: &str, surface: &str, value: &str) {
        // Surfaces are trimmed at parse time, so the span starts at the next
        // non-space byte written.
        if self.pending_space {
            self.text.push(' ');
            self.pending_space = false;
        }
        let start = self.text.len();
        self.push(surface);
        self.entities.push(EntitySpan {
            start,
            end: self.text.len(),
            entity: entity.to_string(),
            value: value.to_string(),
        });
    }
}

fn render(
    grammar: &GrammarFile,
    intent: &str,
    template: &Template,
    mut index: u128,
) -> TrainingExample {
    let radices = radices(grammar, template);
    // Mixed-radix decode, first reference is the most significant digit.
    let mut digits = vec![0u128; radices.len()];
    for (digit, radix) in digits.iter_mut().zip(&radices).rev() {
        *digit = index % radix;
        index /= radix;
    }

    let mut out = Assembler::new();
    let mut refs = digits.into_iter();
    for token in &template.tokens {
        match token {
            TemplateToken::Literal(text) => out.push(text),
            TemplateToken::Alias { name, optional } => {
                let d = refs.next().expect("digit per ref") as usize;
                let choice = if *optional { d.checked_sub(1) } else { Some(d) };
                if let Some(c) = choice {
                    out.push(&grammar.aliases[name][c]);
                }
            }
            TemplateToken::Entity { name, optional } => {
                let d = refs.next().expect("digit per ref") as usize;
                let choice = if *optional { d.checked_sub(1) } else { Some(d) };
                if let Some(c) = choice {
                    let value = &grammar.entities[name][c];
                    out.push_entity(name, &value.surface, &value.canonical);
                }
            }
        }
    }
    TrainingExample {
        text: out.text,
        intent: intent.to_string(),
        entities: out.entities,
    }
}

/// Draws `k` distinct indices from `[0, n)` with a partial Fisher–Yates
/// shuffle over a virtual identity array, then sorts them.
fn sample_indices(n: u128, k: usize, rng: &mut ChaCha8Rng) -> Vec<u128> {
    let mut swapped: HashMap<u128, u128> = HashMap::with_capacity(k * 2);
    let mut out = Vec::with_capacity(k);
    for i in 0..k as u128 {
        let j = rng.random_range(i..n);
        let at_j = *swapped.get(&j).unwrap_or(&j);
        let at_i = *swapped.get(&i).unwrap_or(&i);
        swapped.insert(j, at_i);
        out.push(at_j);
    }
    out.sort_unstable();
    out
}

/// Expands every intent of `grammar`. Intents whose full expansion exceeds
/// `cap_per_intent` are subsampled uniformly without replacement; the sample
/// depends only on `seed` and the intent name.
pub fn expand(
    grammar: &GrammarFile,
    cap_per_intent: NonZeroUsize,
    seed: u64,
) -> Vec<TrainingExample> {
    let mut out = Vec::new();
    for intent in &grammar.intents {
        let counts: Vec<u128> = intent
            .templates
            .iter()
            .map(|t| template_count(grammar, t))
            .collect();
        let total = counts.iter().fold(0u128, |a, &c| a.saturating_add(c));
        let cap = cap_per_intent.get();

        let indices: Vec<u128> = if total <= cap as u128 {
            (0..total).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(intent.name.as_bytes()));
            sample_indices(total, cap, &mut rng)
        };

        let mut template_idx = 0;
        let mut offset = 0u128;
        for global in indices {
            while global >= offset + counts[template_idx] {
                offset += counts[template_idx];
                template_idx += 1;
            }
            out.push(render(
                grammar,
                &intent.name,
                &intent.templates[template_idx],
                global - offset,
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse_grammar;

    fn cap(n: usize) -> NonZeroUsize {
        NonZeroUsize::new(n).unwrap()
    }

    const COLOR_GRAMMAR: &str = "%[req]\n    ~[greet?] I want a @[color] dress\n~[greet]\n    hi\n    hello\n@[color]\n    red\n    blue\n    black\n";

    #[test]
    fn optional_alias_times_entity() {
        let g = parse_grammar(COLOR_GRAMMAR).unwrap();
        let out = expand(&g, DEFAULT_CAP_PER_INTENT, 0);
        let mut texts: Vec<_> = out.iter().map(|e| e.text.clone()).collect();
        texts.sort();
        // Brute force: {"", "hi", "hello"} × {red, blue, black}.
        let mut expected = Vec::new();
        for greet in ["", "hi ", "hello "] {
            for color in ["red", "blue", "black"] {
                expected.push(format!("{greet}I want a {color} dress"));
            }
        }
        expected.sort();
        assert_eq!(texts, expected);
        for ex in &out {
            assert_eq!(ex.entities.len(), 1);
            let span = &ex.entities[0];
            assert_eq!(&ex.text[span.start..span.end], span.value);
            assert_eq!(span.entity, "color");
        }
    }

    #[test]
    fn no_refs_gives_one_example() {
        let g = parse_grammar("%[a]\n    just text\n").unwrap();
        let out = expand(&g, cap(5), 1);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].text, "just text");
        assert!(out[0].entities.is_empty());
    }

    #[test]
    fn capped_sample_is_seeded() {
        let g = parse_grammar(COLOR_GRAMMAR).unwrap();
        let a = expand(&g, cap(4), 42);
        let b = expand(&g, cap(4), 42);
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        let mut texts: Vec<_> = a.iter().map(|e| &e.text).collect();
        texts.dedup();
        assert_eq!(texts.len(), 4, "sample is without replacement");
    }

    #[test]
    fn canonical_values_and_punctuation() {
        let src = "%[a]\n    @[color], please!\n@[color]\n    crimson => red\n    navy blue\n";
        let g = parse_grammar(src).unwrap();
        let out = expand(&g, cap(10), 0);
        assert_eq!(out[0].text, "crimson, please!");
        assert_eq!(out[0].entities[0].value, "red");
        assert_eq!((out[0].entities[0].start, out[0].entities[0].end), (0, 7));
        assert_eq!(out[1].entities[0].value, "navy blue");
    }

    #[test]
    fn sample_indices_are_distinct_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = sample_indices(1u128 << 80, 500, &mut rng);
        assert_eq!(s.len(), 500);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let full = sample_indices(10, 10, &mut rng);
        assert_eq!(full, (0..10).collect::<Vec<_>>());
    }
}
