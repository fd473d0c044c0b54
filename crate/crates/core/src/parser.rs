//! Segments a model reply into an ordered, schema-validated command sequence.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{ItemId, PanelError, PanelSchema, Verb};

/// Upper bound on steps in one sequence.
pub const MAX_SEQUENCE_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

impl std::str::FromStr for ParseMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(ParseMode::Strict),
            "lenient" => Ok(ParseMode::Lenient),
            other => Err(format!("unknown parse mode {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("foreign content {text:?} at byte {offset}")]
    ForeignContent { offset: usize, text: String },
    #[error("unknown item {text:?} at byte {offset}: {source}")]
    UnknownItem {
        offset: usize,
        text: String,
        #[source]
        source: PanelError,
    },
    #[error("item {0} is not interactable")]
    NotInteractable(ItemId),
    #[error("reply contains no item tokens")]
    Empty,
    #[error("sequence has {0} steps, more than the {MAX_SEQUENCE_LEN} allowed")]
    TooLong(usize),
    #[error("sequences were validated against different schemas ({0} vs {1})")]
    SchemaMismatch(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub item: ItemId,
    pub verb: Verb,
}

impl Step {
    pub fn new(item: ItemId) -> Self {
        Self {
            item,
            verb: item.verb(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandSequence {
    pub steps: Vec<Step>,
    pub source_doc: String,
    pub raw_reply: String,
    pub schema: String,
}

impl CommandSequence {
    /// Validates `items` against `schema` directly, without a reply.
    pub fn from_items(
        items: &[ItemId],
        schema: &PanelSchema,
        source_doc: &str,
    ) -> Result<Self, ParseError> {
        let steps = validate(items.iter().copied(), schema)?;
        let mut seq = CommandSequence {
            steps,
            source_doc: source_doc.to_string(),
            raw_reply: String::new(),
            schema: schema.name().to_string(),
        };
        seq.raw_reply = render_sequence(&seq);
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn items(&self) -> Vec<ItemId> {
        self.steps.iter().map(|s| s.item).collect()
    }
}

impl fmt::Display for CommandSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_sequence(self))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub mode: ParseMode,
    pub token_count: usize,
    pub rejected_fragments: Vec<(usize, String)>,
}

fn item_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b[A-Z]_\d{2}\b").expect("item pattern compiles"))
}

fn is_separator(c: char) -> bool {
    c == ',' || c.is_whitespace()
}

fn validate(
    items: impl IntoIterator<Item = ItemId>,
    schema: &PanelSchema,
) -> Result<Vec<Step>, ParseError> {
    let mut steps = Vec::new();
    for item in items {
        if !schema.contains(item) {
            return Err(ParseError::UnknownItem {
                offset: 0,
                text: item.to_string(),
                source: PanelError::OutOfRange {
                    item: item.to_string(),
                    count: schema.count(item.category),
                },
            });
        }
        if !schema.is_interactable(item) {
            return Err(ParseError::NotInteractable(item));
        }
        steps.push(Step::new(item));
    }
    check_len(steps.len())?;
    Ok(steps)
}

fn check_len(n: usize) -> Result<(), ParseError> {
    match n {
        0 => Err(ParseError::Empty),
        n if n > MAX_SEQUENCE_LEN => Err(ParseError::TooLong(n)),
        _ => Ok(()),
    }
}

fn resolve(
    token: &str,
    offset: usize,
    schema: &PanelSchema,
) -> Result<ItemId, ParseError> {
    let item = schema.parse_item(token).map_err(|source| match source {
        PanelError::Malformed(_) => ParseError::ForeignContent {
            offset,
            text: token.to_string(),
        },
        source => ParseError::UnknownItem {
            offset,
            text: token.to_string(),
            source,
        },
    })?;
    if !schema.is_interactable(item) {
        return Err(ParseError::NotInteractable(item));
    }
    Ok(item)
}

/// Byte-offset tokens separated by commas and whitespace.
fn split_tokens(text: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut rest = text;
    let base = text.as_ptr() as usize;
    std::iter::from_fn(move || {
        let start = rest.find(|c: char| !is_separator(c))?;
        rest = &rest[start..];
        let end = rest.find(is_separator).unwrap_or(rest.len());
        let (token, tail) = rest.split_at(end);
        rest = tail;
        Some((token.as_ptr() as usize - base, token))
    })
}

pub fn parse_reply(
    reply: &str,
    schema: &PanelSchema,
    mode: ParseMode,
    source_doc: &str,
) -> Result<(CommandSequence, ParseReport), ParseError> {
    let mut items = Vec::new();
    let mut rejected = Vec::new();

    match mode {
        ParseMode::Strict => {
            for (offset, token) in split_tokens(reply) {
                items.push(resolve(token, offset, schema)?);
            }
        }
        ParseMode::Lenient => {
            let mut cursor = 0;
            for m in item_pattern().find_iter(reply) {
                push_fragment(reply, cursor, m.start(), &mut rejected);
                items.push(resolve(m.as_str(), m.start(), schema)?);
                cursor = m.end();
            }
            push_fragment(reply, cursor, reply.len(), &mut rejected);
        }
    }

    check_len(items.len())?;
    let report = ParseReport {
        mode,
        token_count: items.len(),
        rejected_fragments: rejected,
    };
    let seq = CommandSequence {
        steps: items.into_iter().map(Step::new).collect(),
        source_doc: source_doc.to_string(),
        raw_reply: reply.to_string(),
        schema: schema.name().to_string(),
    };
    Ok((seq, report))
}

fn push_fragment(reply: &str, from: usize, to: usize, out: &mut Vec<(usize, String)>) {
    let gap = &reply[from..to];
    let trimmed = gap.trim_matches(is_separator);
    if !trimmed.is_empty() {
        let lead = gap.len() - gap.trim_start_matches(is_separator).len();
        out.push((from + lead, trimmed.to_string()));
    }
}

/// Canonical `B_04, K_03` form.
pub fn render_sequence(seq: &CommandSequence) -> String {
    render_items(seq.steps.iter().map(|s| s.item))
}

pub fn render_items(items: impl IntoIterator<Item = ItemId>) -> String {
    items
        .into_iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn sequence_equal(a: &CommandSequence, b: &CommandSequence) -> Result<bool, ParseError> {
    if a.schema != b.schema {
        return Err(ParseError::SchemaMismatch(a.schema.clone(), b.schema.clone()));
    }
    Ok(a.len() == b.len() && a.steps.iter().zip(&b.steps).all(|(x, y)| x.item == y.item))
}
