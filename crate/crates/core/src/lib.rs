//! Compiles free-form maintenance instructions into ordered control-panel
//! interactions, tracks a guided session against a panel digital twin and
//! scores the result.
//!
//! The flow is `ingest` → `prompt` → `llm` → `parser`, wrapped by
//! [`pipeline::Compiler`]; a [`session::Session`] then serves the compiled
//! sequence one step at a time and [`analytics`] scores the session log.

pub mod analytics;
pub mod exec;
pub mod fixtures;
pub mod ingest;
pub mod llm;
pub mod panel;
pub mod parser;
pub mod pipeline;
pub mod prompt;
pub mod session;
pub mod wire;

pub use exec::Execution;
pub use panel::{Category, ItemId, PanelSchema, Verb};
pub use parser::{CommandSequence, ParseMode};
