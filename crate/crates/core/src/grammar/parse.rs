use std::collections::BTreeMap;

use super::{
    EntityValue, GrammarError, GrammarFile, IntentBlock, Position, RefKind, Template, TemplateToken,
};

const INDENT: &str = "    ";

enum Block {
    Intent(usize),
    Alias(String),
    Entity(String),
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> GrammarError {
    GrammarError::Syntax {
        pos: Position { line, column },
        message: message.into(),
    }
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_header(line: &str, lineno: usize) -> Result<(char, String), GrammarError> {
    let trimmed = line.trim_end();
    let mut chars = trimmed.chars();
    let sigil = chars.next().unwrap_or(' ');
    if !matches!(sigil, '%' | '~' | '@')
        || !trimmed[1..].starts_with('[')
        || !trimmed.ends_with(']')
    {
        return Err(syntax(
            lineno,
            1,
            format!("expected a block header like `%[name]`, found `{trimmed}`"),
        ));
    }
    let name = &trimmed[2..trimmed.len() - 1];
    if !valid_name(name) {
        return Err(syntax(lineno, 3, format!("invalid block name `{name}`")));
    }
    Ok((sigil, name.to_string()))
}

/// Splits a template line into literals and references. `col0` is the
/// 1-based column of the first byte of `text`.
fn parse_template(text: &str, lineno: usize, col0: usize) -> Result<Template, GrammarError> {
    let mut tokens = Vec::new();
    let mut literal_start = 0;
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let sigil = bytes[i];
        if (sigil == b'~' || sigil == b'@') && bytes.get(i + 1) == Some(&b'[') {
            if literal_start < i {
                tokens.push(TemplateToken::Literal(text[literal_start..i].to_string()));
            }
            let close = text[i..]
                .find(']')
                .map(|off| i + off)
                .ok_or_else(|| syntax(lineno, col0 + i, "unclosed reference"))?;
            let inner = &text[i + 2..close];
            let (name, optional) = match inner.strip_suffix('?') {
                Some(n) => (n, true),
                None => (inner, false),
            };
            if !valid_name(name) {
                return Err(syntax(
                    lineno,
                    col0 + i,
                    format!("invalid reference name `{inner}`"),
                ));
            }
            let name = name.to_string();
            tokens.push(if sigil == b'~' {
                TemplateToken::Alias { name, optional }
            } else {
                TemplateToken::Entity { name, optional }
            });
            i = close + 1;
            literal_start = i;
        } else {
            i += 1;
        }
    }
    if literal_start < text.len() {
        tokens.push(TemplateToken::Literal(text[literal_start..].to_string()));
    }
    Ok(Template {
        tokens,
        pos: Position {
            line: lineno,
            column: col0,
        },
    })
}

fn reject_refs(text: &str, lineno: usize, col0: usize, what: &str) -> Result<(), GrammarError> {
    for pat in ["~[", "@["] {
        if let Some(off) = text.find(pat) {
            return Err(syntax(
                lineno,
                col0 + off,
                format!("{what} variants must be literal text"),
            ));
        }
    }
    Ok(())
}

/// Parses grammar source text, resolving every reference.
pub fn parse_grammar(source: &str) -> Result<GrammarFile, GrammarError> {
    let mut grammar = GrammarFile::default();
    let mut alias_pos: BTreeMap<String, Position> = BTreeMap::new();
    let mut entity_pos: BTreeMap<String, Position> = BTreeMap::new();
    let mut current: Option<Block> = None;

    for (idx, raw) in source.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }

        if !line.starts_with(char::is_whitespace) {
            let (sigil, name) = parse_header(line, lineno)?;
            let pos = Position {
                line: lineno,
                column: 1,
            };
            current = Some(match sigil {
                '%' => {
                    if grammar.intents.iter().any(|b| b.name == name) {
                        return Err(GrammarError::DuplicateIntent { name, pos });
                    }
                    grammar.intents.push(IntentBlock {
                        name,
                        templates: Vec::new(),
                        pos,
                    });
                    Block::Intent(grammar.intents.len() - 1)
                }
                '~' => {
                    if alias_pos.insert(name.clone(), pos).is_some() {
                        return Err(syntax(lineno, 1, format!("duplicate alias `{name}`")));
                    }
                    grammar.aliases.insert(name.clone(), Vec::new());
                    Block::Alias(name)
                }
                _ => {
                    if entity_pos.insert(name.clone(), pos).is_some() {
                        return Err(syntax(lineno, 1, format!("duplicate entity `{name}`")));
                    }
                    grammar.entities.insert(name.clone(), Vec::new());
                    Block::Entity(name)
                }
            });
            continue;
        }

        let Some(body) = line.strip_prefix(INDENT) else {
            return Err(syntax(
                lineno,
                1,
                "variant lines must be indented by 4 spaces",
            ));
        };
        if body.starts_with(char::is_whitespace) {
            return Err(syntax(
                lineno,
                5,
                "variant lines must be indented by exactly 4 spaces",
            ));
        }
        let text = body.trim_end();
        let col0 = INDENT.len() + 1;
        match &current {
            None => return Err(syntax(lineno, col0, "variant line outside of any block")),
            Some(Block::Intent(i)) => {
                let template = parse_template(text, lineno, col0)?;
                grammar.intents[*i].templates.push(template);
            }
            Some(Block::Alias(name)) => {
                reject_refs(text, lineno, col0, "alias")?;
                grammar
                    .aliases
                    .get_mut(name)
                    .expect("alias registered")
                    .push(text.to_string());
            }
            Some(Block::Entity(name)) => {
                reject_refs(text, lineno, col0, "entity")?;
                let (surface, canonical) = match text.split_once("=>") {
                    Some((s, c)) => (s.trim(), c.trim()),
                    None => (text, text),
                };
                if surface.is_empty() || canonical.is_empty() {
                    return Err(syntax(
                        lineno,
                        col0,
                        "entity variant needs a surface and a value",
                    ));
                }
                grammar
                    .entities
                    .get_mut(name)
                    .expect("entity registered")
                    .push(EntityValue {
                        surface: surface.to_string(),
                        canonical: canonical.to_string(),
                    });
            }
        }
    }

    for intent in &grammar.intents {
        if intent.templates.is_empty() {
            return Err(GrammarError::EmptyIntent {
                name: intent.name.clone(),
                pos: intent.pos,
            });
        }
    }
    for (name, variants) in &grammar.aliases {
        if variants.is_empty() {
            let pos = alias_pos[name];
            return Err(syntax(
                pos.line,
                pos.column,
                format!("alias `{name}` has no variants"),
            ));
        }
    }
    for (name, values) in &grammar.entities {
        if values.is_empty() {
            let pos = entity_pos[name];
            return Err(syntax(
                pos.line,
                pos.column,
                format!("entity `{name}` has no values"),
            ));
        }
    }
    for intent in &grammar.intents {
        for template in &intent.templates {
            resolve_refs(&grammar, template)?;
        }
    }
    Ok(grammar)
}

fn resolve_refs(grammar: &GrammarFile, template: &Template) -> Result<(), GrammarError> {
    // Recompute columns by walking the tokens; literals and refs are contiguous.
    let mut column = template.pos.column;
    for token in &template.tokens {
        let (kind, name, optional, known) = match token {
            TemplateToken::Literal(text) => {
                column += text.len();
                continue;
            }
            TemplateToken::Alias { name, optional } => (
                RefKind::Alias,
                name,
                *optional,
                grammar.aliases.contains_key(name),
            ),
            TemplateToken::Entity { name, optional } => (
                RefKind::Entity,
                name,
                *optional,
                grammar.entities.contains_key(name),
            ),
        };
        if !known {
            return Err(GrammarError::UnresolvedReference {
                kind,
                name: name.clone(),
                pos: Position {
                    line: template.pos.line,
                    column,
                },
            });
        }
        column += name.len() + 3 + usize::from(optional);
    }
    Ok(())
}
