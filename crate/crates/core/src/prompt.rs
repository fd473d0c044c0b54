//! Three-part prompt composition: context, instruction, reinforcement.

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::ingest::{word_count, InstructionDocument};
use crate::panel::{Category, PanelSchema};

/// Version tag of the bundled template set.
pub const TEMPLATE_VERSION: &str = "default-v1";

const BUNDLED_PREAMBLE: &str = include_str!("../fixtures/templates/default/context.txt");
const BUNDLED_REINFORCEMENT: &str = include_str!("../fixtures/templates/default/reinforcement.txt");

const PART_SEPARATOR: &str = "\n\n";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt part {0} is empty")]
    EmptyPart(&'static str),
    #[error("cannot read template {path}: {source}")]
    Template {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Context preamble and reinforcement directive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub version: String,
    pub context_preamble: String,
    pub reinforcement: String,
}

impl Templates {
    pub fn bundled() -> Self {
        Self {
            version: TEMPLATE_VERSION.to_string(),
            context_preamble: BUNDLED_PREAMBLE.trim().to_string(),
            reinforcement: BUNDLED_REINFORCEMENT.trim().to_string(),
        }
    }

    /// Loads `context.txt` and `reinforcement.txt` from a template directory.
    /// The directory name becomes the version tag.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path)
                .map(|s| s.trim().to_string())
                .map_err(|source| PromptError::Template {
                    path: path.display().to_string(),
                    source,
                })
        };
        Ok(Self {
            version: dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "custom".to_string()),
            context_preamble: read("context.txt")?,
            reinforcement: read("reinforcement.txt")?,
        })
    }

    pub fn context(&self, schema: &PanelSchema) -> String {
        build_context(schema, &self.context_preamble)
    }
}

impl Default for Templates {
    fn default() -> Self {
        Self::bundled()
    }
}

/// One sentence listing every interactable item grouped by category,
/// e.g. `The interactable items are: buttons (press) B_00, B_01; handles (turn) H_00.`
pub fn inventory_sentence(schema: &PanelSchema) -> String {
    let groups: Vec<String> = Category::ALL
        .into_iter()
        .filter(|c| schema.spec(*c).interactable && schema.count(*c) > 0)
        .map(|c| {
            let names: Vec<String> = (0..schema.count(c))
                .map(|i| format!("{}_{:02}", c.code(), i))
                .collect();
            format!("{} ({}) {}", c.plural(), c.verb(), names.join(", "))
        })
        .collect();
    format!("The interactable items are: {}.", groups.join("; "))
}

pub fn build_context(schema: &PanelSchema, task_preamble: &str) -> String {
    let preamble = task_preamble.trim();
    let inventory = inventory_sentence(schema);
    if preamble.is_empty() {
        inventory
    } else {
        format!("{preamble} {inventory}")
    }
}

/// The output-format directive. Schema-independent.
pub fn build_reinforcement(_schema: &PanelSchema) -> String {
    Templates::bundled().reinforcement
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptBundle {
    pub context: String,
    pub instruction: String,
    pub reinforcement: String,
    pub total_words: usize,
}

impl PromptBundle {
    pub fn render(&self) -> String {
        [
            self.context.as_str(),
            self.instruction.as_str(),
            self.reinforcement.as_str(),
        ]
        .join(PART_SEPARATOR)
    }
}

pub fn assemble(
    context: &str,
    doc: &InstructionDocument,
    reinforcement: &str,
) -> Result<PromptBundle, PromptError> {
    assemble_parts(context, &doc.text, reinforcement)
}

pub fn assemble_parts(
    context: &str,
    instruction: &str,
    reinforcement: &str,
) -> Result<PromptBundle, PromptError> {
    for (name, part) in [
        ("context", context),
        ("instruction", instruction),
        ("reinforcement", reinforcement),
    ] {
        if part.trim().is_empty() {
            return Err(PromptError::EmptyPart(name));
        }
    }
    Ok(PromptBundle {
        context: context.to_string(),
        instruction: instruction.to_string(),
        reinforcement: reinforcement.to_string(),
        total_words: word_count(context) + word_count(instruction) + word_count(reinforcement),
    })
}
