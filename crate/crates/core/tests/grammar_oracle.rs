use std::num::NonZeroUsize;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylechat_core::grammar::{expand, expansion_count, parse_grammar, DEFAULT_CAP_PER_INTENT};

const WORDS: [&str; 8] = ["show", "me", "a", "nice", "dress", "please", "now", "the"];

/// One way to fill a template slot: a word and/or an entity (name, value).
type Choice = (Option<String>, Option<(String, String)>);

enum Piece {
    Lit(String),
    Alias(usize, bool),
    Entity(usize, bool),
}

struct RandomGrammar {
    intents: Vec<Vec<Vec<Piece>>>,
    aliases: Vec<Vec<String>>,
    entities: Vec<Vec<(String, String)>>,
}

fn phrase(rng: &mut ChaCha8Rng, max_words: usize) -> String {
    let n = rng.random_range(1..=max_words);
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

impl RandomGrammar {
    fn generate(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
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
                    .map(|v| (format!("val{e}x{v}"), format!("canon{}", v % 2)))
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
        let mut s = String::from("# generated\n");
        for (i, templates) in self.intents.iter().enumerate() {
            s.push_str(&format!("%[intent{i}]\n"));
            for t in templates {
                let line: Vec<String> = t
                    .iter()
                    .map(|p| match p {
                        Piece::Lit(w) => w.clone(),
                        Piece::Alias(a, o) => format!("~[alias{a}{}]", if *o { "?" } else { "" }),
                        Piece::Entity(e, o) => format!("@[ent{e}{}]", if *o { "?" } else { "" }),
                    })
                    .collect();
                s.push_str(&format!("    {}\n", line.join(" ")));
            }
        }
        for (a, variants) in self.aliases.iter().enumerate() {
            s.push_str(&format!("~[alias{a}]\n"));
            for v in variants {
                s.push_str(&format!("    {v}\n"));
            }
        }
        for (e, values) in self.entities.iter().enumerate() {
            s.push_str(&format!("\n@[ent{e}]\n"));
            for (surface, canonical) in values {
                s.push_str(&format!("    {surface} => {canonical}\n"));
            }
        }
        s
    }

    /// Every expansion as (normalized text, [(entity, canonical)]), by
    /// direct recursion over the choices of each piece.
    fn enumerate(&self, intent: usize) -> Vec<(String, Vec<(String, String)>)> {
        let mut out = Vec::new();
        for t in &self.intents[intent] {
            let mut partial = vec![(Vec::<String>::new(), Vec::<(String, String)>::new())];
            for piece in t {
                let mut next = Vec::new();
                for (words, ents) in &partial {
                    let options: Vec<Choice> = match piece {
                        Piece::Lit(w) => vec![(Some(w.clone()), None)],
                        Piece::Alias(a, opt) => {
                            let mut o: Vec<_> = self.aliases[*a]
                                .iter()
                                .map(|v| (Some(v.clone()), None))
                                .collect();
                            if *opt {
                                o.push((None, None));
                            }
                            o
                        }
                        Piece::Entity(e, opt) => {
                            let mut o: Vec<_> = self.entities[*e]
                                .iter()
                                .map(|(s, c)| {
                                    (Some(s.clone()), Some((format!("ent{e}"), c.clone())))
                                })
                                .collect();
                            if *opt {
                                o.push((None, None));
                            }
                            o
                        }
                    };
                    for (w, ent) in options {
                        let mut words = words.clone();
                        let mut ents = ents.clone();
                        words.extend(w);
                        ents.extend(ent);
                        next.push((words, ents));
                    }
                }
                partial = next;
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

fn check_against_brute_force(seed: u64) {
    let rg = RandomGrammar::generate(seed);
    let g = parse_grammar(&rg.source()).expect("generated grammar parses");
    let examples = expand(&g, DEFAULT_CAP_PER_INTENT, seed);
    for (i, block) in g.intents.iter().enumerate() {
        let brute = rg.enumerate(i);
        assert_eq!(
            expansion_count(&g, block),
            brute.len() as u128,
            "seed {seed} intent {i}"
        );
        let mut got: Vec<(String, Vec<(String, String)>)> = examples
            .iter()
            .filter(|ex| ex.intent == block.name)
            .map(|ex| {
                for span in &ex.entities {
                    assert!(span.start < span.end && span.end <= ex.text.len());
                    assert!(ex.text[span.start..span.end].starts_with("val"));
                }
                let ents = ex
                    .entities
                    .iter()
                    .map(|e| (e.entity.clone(), e.value.clone()))
                    .collect();
                (ex.text.clone(), ents)
            })
            .collect();
        got.sort();
        assert_eq!(got, brute, "seed {seed} intent {i}");
    }
}

#[test]
fn twenty_random_grammars_match_enumeration() {
    for seed in 0..20 {
        check_against_brute_force(seed);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expansion_matches_enumeration(seed in any::<u64>()) {
        check_against_brute_force(seed);
    }

    #[test]
    fn capped_expansion_is_a_seeded_subset(seed in any::<u64>(), cap in 1usize..6) {
        let rg = RandomGrammar::generate(seed);
        let g = parse_grammar(&rg.source()).unwrap();
        let cap = NonZeroUsize::new(cap).unwrap();
        let a = expand(&g, cap, seed);
        prop_assert_eq!(&a, &expand(&g, cap, seed));
        for (i, block) in g.intents.iter().enumerate() {
            let brute = rg.enumerate(i);
            let mine: Vec<_> = a.iter().filter(|e| e.intent == block.name).collect();
            prop_assert_eq!(mine.len(), brute.len().min(cap.get()));
            for ex in mine {
                prop_assert!(brute.iter().any(|(t, _)| *t == ex.text));
            }
        }
    }
}
