//! One client connection bound to one guidance session.
//!
//! The transport reader feeds frames into the inbox, this loop applies them
//! to the session one at a time, and replies go to the transport writer.
//! Pipeline work runs on the blocking pool and posts its outcome back into
//! the same inbox, so the session is only ever touched from this loop.

use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use tokio::sync::{mpsc, watch};

use panelguide_core::analytics::sequence_accuracy;
use panelguide_core::ingest::{ingest_text, IngestError, ImageBlob, InstructionDocument};
use panelguide_core::parser::{CommandSequence, ParseReport};
use panelguide_core::pipeline::{PipelineError, Stage};
use panelguide_core::session::{Direction, Phase, Session, SessionError};
use panelguide_core::wire::WireMessage;

use crate::lines::Frame;
use crate::server::Shared;

pub(crate) const ERR_MALFORMED: u16 = 400;
pub(crate) const ERR_WRONG_PHASE: u16 = 409;
pub(crate) const ERR_TOO_LONG: u16 = 413;
pub(crate) const ERR_BAD_ITEM: u16 = 422;
pub(crate) const ERR_PIPELINE: u16 = 502;

/// Document id for instruction text sent inline rather than by fixture id.
pub const INLINE_DOC_ID: &str = "inline";

pub(crate) enum Input {
    Frame(Frame),
    Closed,
    Recognized(Result<InstructionDocument, IngestError>),
    Compiled(ModelOutcome),
}

pub(crate) struct ModelOutcome {
    reply: Option<String>,
    result: Result<(CommandSequence, ParseReport), PipelineError>,
}

/// Appends new session records to `<dir>/<session id>.jsonl`.
struct LogSink {
    dir: PathBuf,
    file: Option<File>,
    written: usize,
}

impl LogSink {
    fn sync(&mut self, session: &Session) {
        let pending = &session.log()[self.written..];
        if pending.is_empty() {
            return;
        }
        if self.file.is_none() {
            let path = self.dir.join(format!("{}.jsonl", session.id()));
            match File::create(&path) {
                Ok(f) => self.file = Some(f),
                Err(e) => {
                    tracing::error!(path = %path.display(), "cannot create session log: {e}");
                    return;
                }
            }
        }
        let file = self.file.as_mut().expect("log file opened above");
        let mut text = String::new();
        for record in pending {
            text.push_str(&record.to_json_line());
            text.push('\n');
        }
        if let Err(e) = file.write_all(text.as_bytes()).and_then(|_| file.flush()) {
            tracing::error!(session = session.id(), "session log write failed: {e}");
            return;
        }
        self.written = session.log().len();
    }
}

pub(crate) struct Connection {
    shared: Arc<Shared>,
    session: Session,
    log: LogSink,
    out: mpsc::UnboundedSender<String>,
    inbox: mpsc::UnboundedSender<Input>,
}

impl Connection {
    pub(crate) fn new(
        shared: Arc<Shared>,
        out: mpsc::UnboundedSender<String>,
        inbox: mpsc::UnboundedSender<Input>,
    ) -> Self {
        let id = shared.allocate_id();
        let session = Session::new(id, shared.compiler.schema.clone(), shared.clock.clone());
        let log = LogSink {
            dir: shared.log_dir.clone(),
            file: None,
            written: 0,
        };
        Self {
            shared,
            session,
            log,
            out,
            inbox,
        }
    }

    pub(crate) async fn run(
        mut self,
        mut rx: mpsc::UnboundedReceiver<Input>,
        mut shutdown: watch::Receiver<bool>,
    ) {
        loop {
            let input = tokio::select! {
                input = rx.recv() => input,
                _ = shutdown.changed() => None,
            };
            let Some(input) = input else { break };
            if matches!(input, Input::Closed) {
                break;
            }
            let replies = self.apply(input);
            // Records hit the disk before the client hears about them.
            self.log.sync(&self.session);
            for reply in replies {
                if self.out.send(reply.encode()).is_err() {
                    return;
                }
            }
        }
    }

    fn apply(&mut self, input: Input) -> Vec<WireMessage> {
        match input {
            Input::Frame(Frame::TooLong) => vec![WireMessage::err(ERR_TOO_LONG, "line-too-long")],
            Input::Frame(Frame::Line(line)) => match WireMessage::parse(&line) {
                Ok(msg) => self.handle(msg),
                Err(e) => vec![WireMessage::err(ERR_MALFORMED, e.to_string())],
            },
            Input::Recognized(result) => self.on_recognized(result),
            Input::Compiled(outcome) => self.on_compiled(outcome),
            Input::Closed => Vec::new(),
        }
    }

    fn handle(&mut self, msg: WireMessage) -> Vec<WireMessage> {
        match msg {
            WireMessage::Hello(role) => self.on_hello(role),
            WireMessage::Text(payload) => self.on_text(&payload),
            WireMessage::Capture(path) => self.on_capture(path),
            WireMessage::Next => self.on_move(Direction::Next),
            WireMessage::Prev => self.on_move(Direction::Prev),
            WireMessage::Act(token) => self.on_act(&token),
            other => vec![WireMessage::err(
                ERR_MALFORMED,
                format!("{} is a server message", other.kind()),
            )],
        }
    }

    fn state(&self) -> WireMessage {
        WireMessage::State(self.session.phase())
    }

    fn on_hello(&mut self, role: String) -> Vec<WireMessage> {
        if role == self.session.id() {
            return vec![self.state()];
        }
        if !self.session.log().is_empty() {
            return vec![wrong_phase()];
        }
        if !self.shared.reserve(&role) {
            return vec![WireMessage::err(ERR_WRONG_PHASE, "role-taken")];
        }
        self.shared.release(self.session.id());
        self.session.rename(role);
        vec![self.state()]
    }

    fn on_text(&mut self, payload: &str) -> Vec<WireMessage> {
        if self.session.begin_capture().is_err() {
            return vec![wrong_phase()];
        }
        let doc = if self.shared.fixtures.instructions.contains_key(payload) {
            self.shared
                .fixtures
                .instruction(payload)
                .map_err(|e| e.to_string())
        } else {
            ingest_text(payload, INLINE_DOC_ID).map_err(|e| e.to_string())
        };
        match doc {
            Ok(doc) => self.await_model(doc),
            Err(detail) => self.pipeline_failed(Stage::Ingest, &detail),
        }
    }

    fn on_capture(&mut self, path: String) -> Vec<WireMessage> {
        if self.session.begin_capture().is_err() {
            return vec![wrong_phase()];
        }
        let ocr = self.shared.ocr.clone();
        let min_words = self.shared.min_ocr_words;
        let inbox = self.inbox.clone();
        tokio::task::spawn_blocking(move || {
            let result = ImageBlob::from_file(path.as_ref())
                .and_then(|image| panelguide_core::ingest::ingest_image(&image, ocr.as_ref(), min_words));
            let _ = inbox.send(Input::Recognized(result));
        });
        vec![self.state()]
    }

    fn on_recognized(&mut self, result: Result<InstructionDocument, IngestError>) -> Vec<WireMessage> {
        if self.session.phase() != Phase::Capturing {
            return Vec::new();
        }
        match result {
            Ok(doc) => self.await_model(doc),
            Err(e) => self.pipeline_failed(Stage::Ingest, &e.to_string()),
        }
    }

    fn await_model(&mut self, doc: InstructionDocument) -> Vec<WireMessage> {
        if self.session.begin_awaiting().is_err() {
            return vec![wrong_phase()];
        }
        let compiler = self.shared.compiler.clone();
        let inbox = self.inbox.clone();
        tokio::task::spawn_blocking(move || {
            let outcome = match compiler.request(&doc) {
                Ok((_, completion)) => ModelOutcome {
                    result: compiler.parse(&doc, &completion.text),
                    reply: Some(completion.text),
                },
                Err(e) => ModelOutcome {
                    reply: None,
                    result: Err(e),
                },
            };
            let _ = inbox.send(Input::Compiled(outcome));
        });
        vec![self.state()]
    }

    fn on_compiled(&mut self, outcome: ModelOutcome) -> Vec<WireMessage> {
        if self.session.phase() != Phase::AwaitingModel {
            return Vec::new();
        }
        if let Some(reply) = &outcome.reply {
            self.session.record_reply(reply);
        }
        match outcome.result {
            Ok((seq, report)) => {
                let items = seq.items();
                match self.session.install_sequence(seq, report) {
                    Ok(()) => vec![WireMessage::Seq(items), self.state()],
                    Err(e) => self.pipeline_failed(Stage::Parse, &e.to_string()),
                }
            }
            Err(e) => {
                let detail = match &e {
                    PipelineError::Parse { source, .. } => source.to_string(),
                    PipelineError::Ingest(inner) => inner.to_string(),
                    PipelineError::Prompt(inner) => inner.to_string(),
                    PipelineError::Llm(inner) => inner.to_string(),
                };
                self.pipeline_failed(e.stage(), &detail)
            }
        }
    }

    fn pipeline_failed(&mut self, stage: Stage, detail: &str) -> Vec<WireMessage> {
        let _ = self.session.fail(stage.as_str(), detail);
        vec![WireMessage::err(ERR_PIPELINE, format!("{stage}: {detail}"))]
    }

    fn on_move(&mut self, direction: Direction) -> Vec<WireMessage> {
        match self.session.advance(direction) {
            Ok(view) => vec![WireMessage::Prompt {
                index: view.index,
                item: view.item,
                verb: view.verb,
            }],
            Err(e) => vec![session_error(e)],
        }
    }

    fn on_act(&mut self, token: &str) -> Vec<WireMessage> {
        if !matches!(self.session.phase(), Phase::Ready | Phase::Running) {
            return vec![wrong_phase()];
        }
        let item = match self.session.schema().parse_item(token) {
            Ok(item) => item,
            Err(e) => return vec![WireMessage::err(ERR_BAD_ITEM, format!("unknown-item {e}"))],
        };
        let event = match self.session.act(item) {
            Ok(event) => event,
            Err(e) => return vec![session_error(e)],
        };
        let mut replies = vec![WireMessage::Evt {
            item: event.item,
            verb: event.verb,
            door_open: event.door_state_at_event,
            violation: event.gating_violation,
        }];
        if self.session.phase() == Phase::Done {
            let seq = self.session.sequence().expect("done implies a sequence");
            let accuracy = sequence_accuracy(&self.session.executed_items(), seq);
            replies.push(WireMessage::Done {
                elapsed_ms: self.session.elapsed_ms().unwrap_or(0),
                accuracy: (accuracy * 10_000.0).round() / 10_000.0,
            });
        }
        replies
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.shared.release(self.session.id());
    }
}

fn wrong_phase() -> WireMessage {
    WireMessage::err(ERR_WRONG_PHASE, "wrong-phase")
}

fn session_error(e: SessionError) -> WireMessage {
    match e {
        SessionError::WrongPhase { .. } | SessionError::EmptySequence => wrong_phase(),
        SessionError::UnknownItem(item) => {
            WireMessage::err(ERR_BAD_ITEM, format!("unknown-item {item}"))
        }
        SessionError::NotInteractable(item) => {
            WireMessage::err(ERR_BAD_ITEM, format!("not-interactable {item}"))
        }
    }
}
