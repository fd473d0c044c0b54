//! The control-panel digital twin: item categories, identifiers and the
//! schema that every other module validates against.
//!
//! A schema is loaded from a small JSON document:
//!
//! ```json
//! {
//!   "name": "vacuum-control-box",
//!   "door_item": "H_00",
//!   "categories": {
//!     "B": { "count": 9, "layer": "external", "verb": "press", "interactable": true },
//!     "S": { "count": 11, "layer": "internal", "verb": "unplug", "interactable": true }
//!   }
//! }
//! ```
//!
//! Category letters absent from `categories` have an empty range.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bundled schema of the vacuum-system control box used in the HVAC and
/// pump maintenance tasks.
pub const DEFAULT_SCHEMA_JSON: &str = include_str!("../fixtures/panel/default.json");

/// Largest per-category item count; identifiers carry two decimal digits.
pub const MAX_CATEGORY_COUNT: u8 = 100;

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("malformed item token {0:?}: expected LETTER_dd")]
    Malformed(String),
    #[error("unknown item category {0:?}")]
    UnknownCategory(char),
    #[error("item {item} outside declared range ({count} declared)")]
    OutOfRange { item: String, count: u8 },
    #[error("schema syntax error: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("schema invariant violated at {path}: {reason}")]
    Invariant { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layer {
    External,
    Internal,
}

/// Canonical interaction verb of a category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verb {
    Read,
    Press,
    Turn,
    Flip,
    Replace,
    Unplug,
}

impl Verb {
    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Read => "read",
            Verb::Press => "press",
            Verb::Turn => "turn",
            Verb::Flip => "flip",
            Verb::Replace => "replace",
            Verb::Unplug => "unplug",
        }
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verb {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "read" => Verb::Read,
            "press" => Verb::Press,
            "turn" => Verb::Turn,
            "flip" => Verb::Flip,
            "replace" => Verb::Replace,
            "unplug" => Verb::Unplug,
            other => return Err(format!("unknown verb {other:?}")),
        })
    }
}

/// The seven item categories of the panel, in canonical listing order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Gauge,
    Button,
    Handle,
    Knob,
    Toggle,
    Fuse,
    Socket,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Gauge,
        Category::Button,
        Category::Handle,
        Category::Knob,
        Category::Toggle,
        Category::Fuse,
        Category::Socket,
    ];

    pub fn code(self) -> char {
        match self {
            Category::Gauge => 'G',
            Category::Button => 'B',
            Category::Handle => 'H',
            Category::Knob => 'K',
            Category::Toggle => 'T',
            Category::Fuse => 'F',
            Category::Socket => 'S',
        }
    }

    pub fn from_code(code: char) -> Option<Category> {
        Category::ALL.into_iter().find(|c| c.code() == code)
    }

    /// Fuses and sockets sit behind the door; everything else is on the
    /// outer panel.
    pub fn layer(self) -> Layer {
        match self {
            Category::Fuse | Category::Socket => Layer::Internal,
            _ => Layer::External,
        }
    }

    pub fn verb(self) -> Verb {
        match self {
            Category::Gauge => Verb::Read,
            Category::Button => Verb::Press,
            Category::Handle | Category::Knob => Verb::Turn,
            Category::Toggle => Verb::Flip,
            Category::Fuse => Verb::Replace,
            Category::Socket => Verb::Unplug,
        }
    }

    /// Plural noun used in prompt inventories.
    pub fn plural(self) -> &'static str {
        match self {
            Category::Gauge => "gauges",
            Category::Button => "buttons",
            Category::Handle => "handles",
            Category::Knob => "knobs",
            Category::Toggle => "toggles",
            Category::Fuse => "fuses",
            Category::Socket => "sockets",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// An item identifier such as `B_04`.
///
/// Construction does not check any schema; use [`PanelSchema::parse_item`]
/// for validated identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemId {
    pub category: Category,
    pub index: u8,
}

impl ItemId {
    pub const fn new(category: Category, index: u8) -> Self {
        Self { category, index }
    }

    /// Parses the `LETTER_dd` shape without consulting a schema.
    pub fn parse_token(text: &str) -> Result<ItemId, PanelError> {
        let token = text.trim();
        let bytes = token.as_bytes();
        let well_formed = bytes.len() == 4
            && bytes[0].is_ascii_uppercase()
            && bytes[1] == b'_'
            && bytes[2].is_ascii_digit()
            && bytes[3].is_ascii_digit();
        if !well_formed {
            return Err(PanelError::Malformed(token.to_string()));
        }
        let letter = bytes[0] as char;
        let category = Category::from_code(letter).ok_or(PanelError::UnknownCategory(letter))?;
        let index = (bytes[2] - b'0') * 10 + (bytes[3] - b'0');
        Ok(ItemId { category, index })
    }

    pub fn layer(self) -> Layer {
        self.category.layer()
    }

    pub fn verb(self) -> Verb {
        self.category.verb()
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{:02}", self.category.code(), self.index)
    }
}

impl Serialize for ItemId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ItemId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ItemId::parse_token(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CategorySpec {
    pub count: u8,
    pub interactable: bool,
}

/// Immutable description of one panel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PanelSchema {
    name: String,
    door_item: ItemId,
    categories: [CategorySpec; 7],
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct SchemaDocument {
    name: String,
    door_item: String,
    categories: BTreeMap<String, CategoryDocument>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct CategoryDocument {
    count: u8,
    layer: Layer,
    verb: Verb,
    interactable: bool,
}

fn invariant(path: impl Into<String>, reason: impl Into<String>) -> PanelError {
    PanelError::Invariant {
        path: path.into(),
        reason: reason.into(),
    }
}

impl PanelSchema {
    /// The bundled vacuum control box: G 00-02, H 00, K 00-04, T 00-04,
    /// B 00-08, F 00-02, S 00-10.
    pub fn default_panel() -> PanelSchema {
        PanelSchema::from_json(DEFAULT_SCHEMA_JSON).expect("bundled schema is valid")
    }

    pub fn from_json(document: &str) -> Result<PanelSchema, PanelError> {
        let doc: SchemaDocument = serde_json::from_str(document)?;

        if doc.name.trim().is_empty() {
            return Err(invariant("name", "must be non-empty"));
        }

        let mut categories = [CategorySpec {
            count: 0,
            interactable: false,
        }; 7];
        for (key, spec) in &doc.categories {
            let path = format!("categories.{key}");
            let mut chars = key.chars();
            let category = match (chars.next(), chars.next()) {
                (Some(c), None) => Category::from_code(c)
                    .ok_or_else(|| invariant(&path, format!("unknown category letter {c:?}")))?,
                _ => return Err(invariant(&path, "category key must be a single letter")),
            };
            if spec.layer != category.layer() {
                return Err(invariant(
                    format!("{path}.layer"),
                    format!("category {key} must be {:?}", category.layer()).to_lowercase(),
                ));
            }
            if spec.verb != category.verb() {
                return Err(invariant(
                    format!("{path}.verb"),
                    format!("category {key} uses verb {}", category.verb()),
                ));
            }
            if spec.count > MAX_CATEGORY_COUNT {
                return Err(invariant(
                    format!("{path}.count"),
                    format!("at most {MAX_CATEGORY_COUNT} items per category"),
                ));
            }
            categories[category.slot()] = CategorySpec {
                count: spec.count,
                interactable: spec.interactable,
            };
        }

        let door_item = ItemId::parse_token(&doc.door_item)
            .map_err(|e| invariant("door_item", e.to_string()))?;
        if door_item.category != Category::Handle {
            return Err(invariant("door_item", format!("{door_item} is not a handle")));
        }
        if door_item.index >= categories[Category::Handle.slot()].count {
            return Err(invariant(
                "door_item",
                format!("{door_item} outside declared handle range"),
            ));
        }
        if !categories[Category::Handle.slot()].interactable {
            return Err(invariant("categories.H.interactable", "door handle must be interactable"));
        }

        Ok(PanelSchema {
            name: doc.name,
            door_item,
            categories,
        })
    }

    /// Renders the schema back to its JSON document form.
    pub fn to_json(&self) -> String {
        let categories = Category::ALL
            .into_iter()
            .filter(|c| self.count(*c) > 0)
            .map(|c| {
                let spec = self.spec(c);
                (
                    c.code().to_string(),
                    CategoryDocument {
                        count: spec.count,
                        layer: c.layer(),
                        verb: c.verb(),
                        interactable: spec.interactable,
                    },
                )
            })
            .collect();
        let doc = SchemaDocument {
            name: self.name.clone(),
            door_item: self.door_item.to_string(),
            categories,
        };
        serde_json::to_string_pretty(&doc).expect("schema document serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn door_item(&self) -> ItemId {
        self.door_item
    }

    pub fn spec(&self, category: Category) -> CategorySpec {
        self.categories[category.slot()]
    }

    pub fn count(&self, category: Category) -> u8 {
        self.spec(category).count
    }

    pub fn is_interactable(&self, item: ItemId) -> bool {
        self.contains(item) && self.spec(item.category).interactable
    }

    pub fn contains(&self, item: ItemId) -> bool {
        item.index < self.count(item.category)
    }

    /// Parses and validates a token such as `B_04` against this schema.
    pub fn parse_item(&self, text: &str) -> Result<ItemId, PanelError> {
        let item = ItemId::parse_token(text)?;
        if !self.contains(item) {
            return Err(PanelError::OutOfRange {
                item: item.to_string(),
                count: self.count(item.category),
            });
        }
        Ok(item)
    }

    pub fn is_internal(&self, item: ItemId) -> bool {
        item.layer() == Layer::Internal
    }

    /// Every item in canonical order (G, B, H, K, T, F, S; ascending index).
    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        Category::ALL
            .into_iter()
            .flat_map(move |c| (0..self.count(c)).map(move |i| ItemId::new(c, i)))
    }

    pub fn interactable_items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.items().filter(move |i| self.spec(i.category).interactable)
    }

    pub fn census(&self) -> Census {
        Census {
            total: self.items().count(),
            interactable: self.interactable_items().count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Census {
    pub total: usize,
    pub interactable: usize,
}

impl fmt::Display for Census {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} items ({} interactable)", self.total, self.interactable)
    }
}
