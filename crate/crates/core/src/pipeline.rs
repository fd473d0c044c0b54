//! ingest -> assemble -> complete -> parse, with the failing stage named.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::ingest::{ingest_image, ImageBlob, IngestError, InstructionDocument, OcrClient};
use crate::llm::{complete, CompletionBackend, CompletionRequest, CompletionResult, LlmError};
use crate::panel::PanelSchema;
use crate::parser::{parse_reply, CommandSequence, ParseError, ParseMode, ParseReport};
use crate::prompt::{assemble, PromptBundle, PromptError, Templates};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Prompt,
    Llm,
    Parse,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Prompt => "prompt",
            Stage::Llm => "llm",
            Stage::Parse => "parse",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("prompt: {0}")]
    Prompt(#[from] PromptError),
    #[error("llm: {0}")]
    Llm(#[from] LlmError),
    #[error("parse: {source}")]
    Parse {
        #[source]
        source: ParseError,
        /// The reply that failed to parse.
        raw_reply: String,
    },
}

impl PipelineError {
    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::Ingest(_) => Stage::Ingest,
            PipelineError::Prompt(_) => Stage::Prompt,
            PipelineError::Llm(_) => Stage::Llm,
            PipelineError::Parse { .. } => Stage::Parse,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Compilation {
    pub document: InstructionDocument,
    pub bundle: PromptBundle,
    pub completion: CompletionResult,
    pub sequence: CommandSequence,
    pub report: ParseReport,
}

/// Everything needed to turn instruction text into a command sequence.
#[derive(Clone)]
pub struct Compiler {
    pub schema: Arc<PanelSchema>,
    pub templates: Templates,
    pub backend: Arc<dyn CompletionBackend>,
    pub mode: ParseMode,
    pub model: String,
}

impl fmt::Debug for Compiler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Compiler")
            .field("schema", &self.schema.name())
            .field("templates", &self.templates.version)
            .field("backend", &self.backend.kind())
            .field("mode", &self.mode)
            .finish()
    }
}

impl Compiler {
    pub fn new(schema: Arc<PanelSchema>, backend: Arc<dyn CompletionBackend>) -> Self {
        Self {
            schema,
            templates: Templates::bundled(),
            backend,
            mode: ParseMode::Strict,
            model: crate::llm::DEFAULT_MODEL.to_string(),
        }
    }

    pub fn with_mode(mut self, mode: ParseMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.templates = templates;
        self
    }

    pub fn prompt(&self, doc: &InstructionDocument) -> Result<PromptBundle, PipelineError> {
        let context = self.templates.context(&self.schema);
        Ok(assemble(&context, doc, &self.templates.reinforcement)?)
    }

    /// Sends the prompt and returns the raw reply, before parsing.
    pub fn request(
        &self,
        doc: &InstructionDocument,
    ) -> Result<(PromptBundle, CompletionResult), PipelineError> {
        let bundle = self.prompt(doc)?;
        let mut req = CompletionRequest::new(bundle.render()).with_fixture(doc.id.clone());
        req.model = self.model.clone();
        let completion = complete(&req, self.backend.as_ref())?;
        Ok((bundle, completion))
    }

    pub fn parse(
        &self,
        doc: &InstructionDocument,
        reply: &str,
    ) -> Result<(CommandSequence, ParseReport), PipelineError> {
        parse_reply(reply, &self.schema, self.mode, &doc.id).map_err(|source| {
            PipelineError::Parse {
                source,
                raw_reply: reply.to_string(),
            }
        })
    }

    pub fn compile(&self, doc: InstructionDocument) -> Result<Compilation, PipelineError> {
        let (bundle, completion) = self.request(&doc)?;
        let (sequence, report) = self.parse(&doc, &completion.text)?;
        Ok(Compilation {
            document: doc,
            bundle,
            completion,
            sequence,
            report,
        })
    }

    pub fn compile_image(
        &self,
        image: &ImageBlob,
        ocr: &dyn OcrClient,
        min_words: usize,
    ) -> Result<Compilation, PipelineError> {
        let doc = ingest_image(image, ocr, min_words)?;
        self.compile(doc)
    }
}
