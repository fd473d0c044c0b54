//! Live guidance state: the compiled sequence, the prompt cursor, door
//! state and the append-only interaction log.
//!
//! Wrong interactions are recorded, never blocked. A session completes once
//! it has seen as many interactions as the sequence has steps; accuracy is
//! scored separately.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::panel::{ItemId, PanelSchema, Verb};
use crate::parser::{render_sequence, CommandSequence, ParseReport};

/// Monotonic millisecond clock.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Clone)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        self.origin.elapsed().as_millis() as u64
    }
}

/// Test clock that only moves when told to.
#[derive(Debug, Clone, Default)]
pub struct ManualClock {
    ms: Arc<AtomicU64>,
}

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self {
            ms: Arc::new(AtomicU64::new(start_ms)),
        }
    }

    pub fn set(&self, ms: u64) {
        self.ms.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) {
        self.ms.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.ms.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Idle,
    Capturing,
    #[serde(rename = "AWAITING_GPT")]
    AwaitingModel,
    Ready,
    Running,
    Done,
    Failed,
}

impl Phase {
    pub const ALL: [Phase; 7] = [
        Phase::Idle,
        Phase::Capturing,
        Phase::AwaitingModel,
        Phase::Ready,
        Phase::Running,
        Phase::Done,
        Phase::Failed,
    ];

    pub fn wire_name(self) -> &'static str {
        match self {
            Phase::Idle => "IDLE",
            Phase::Capturing => "CAPTURING",
            Phase::AwaitingModel => "AWAITING_GPT",
            Phase::Ready => "READY",
            Phase::Running => "RUNNING",
            Phase::Done => "DONE",
            Phase::Failed => "FAILED",
        }
    }

    pub fn from_wire(s: &str) -> Option<Phase> {
        Phase::ALL.into_iter().find(|p| p.wire_name() == s)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.wire_name())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SessionError {
    #[error("wrong-phase: {op} not allowed in {phase}")]
    WrongPhase { op: &'static str, phase: Phase },
    #[error("empty sequence")]
    EmptySequence,
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
    #[error("item {0} is not interactable")]
    NotInteractable(ItemId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Next,
    Prev,
}

/// The step currently shown to the operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptView {
    pub index: usize,
    pub item: ItemId,
    pub verb: Verb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionEvent {
    pub timestamp_ms: u64,
    pub item: ItemId,
    pub verb: Verb,
    pub door_state_at_event: bool,
    pub gating_violation: bool,
}

/// One line of the JSONL session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Phase {
        session: String,
        timestamp_ms: u64,
        phase: Phase,
    },
    Reply {
        session: String,
        timestamp_ms: u64,
        raw_reply: String,
    },
    Sequence {
        session: String,
        timestamp_ms: u64,
        source_doc: String,
        steps: String,
        report: ParseReport,
    },
    Event {
        session: String,
        #[serde(flatten)]
        event: InteractionEvent,
    },
    Error {
        session: String,
        timestamp_ms: u64,
        stage: String,
        message: String,
    },
}

impl LogRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("log records serialize")
    }
}

pub struct Session {
    id: String,
    schema: Arc<PanelSchema>,
    clock: Arc<dyn Clock>,
    phase: Phase,
    sequence: Option<CommandSequence>,
    cursor: usize,
    door_open: bool,
    events: Vec<InteractionEvent>,
    t0: Option<u64>,
    t_end: Option<u64>,
    log: Vec<LogRecord>,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("phase", &self.phase)
            .field("cursor", &self.cursor)
            .field("door_open", &self.door_open)
            .field("events", &self.events.len())
            .finish()
    }
}

impl Session {
    pub fn new(id: impl Into<String>, schema: Arc<PanelSchema>, clock: Arc<dyn Clock>) -> Self {
        Self {
            id: id.into(),
            schema,
            clock,
            phase: Phase::Idle,
            sequence: None,
            cursor: 0,
            door_open: false,
            events: Vec::new(),
            t0: None,
            t_end: None,
            log: Vec::new(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// Renames the session; only possible before anything was logged.
    pub fn rename(&mut self, id: impl Into<String>) -> bool {
        if self.log.is_empty() {
            self.id = id.into();
            true
        } else {
            false
        }
    }

    pub fn schema(&self) -> &PanelSchema {
        &self.schema
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn sequence(&self) -> Option<&CommandSequence> {
        self.sequence.as_ref()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn door_open(&self) -> bool {
        self.door_open
    }

    pub fn events(&self) -> &[InteractionEvent] {
        &self.events
    }

    pub fn log(&self) -> &[LogRecord] {
        &self.log
    }

    pub fn t0(&self) -> Option<u64> {
        self.t0
    }

    pub fn t_end(&self) -> Option<u64> {
        self.t_end
    }

    fn wrong_phase(&self, op: &'static str) -> SessionError {
        SessionError::WrongPhase {
            op,
            phase: self.phase,
        }
    }

    fn enter(&mut self, phase: Phase, timestamp_ms: u64) {
        self.phase = phase;
        self.log.push(LogRecord::Phase {
            session: self.id.clone(),
            timestamp_ms,
            phase,
        });
    }

    /// Marks the start of the timed task. A failed session may retry.
    pub fn begin_capture(&mut self) -> Result<(), SessionError> {
        if !matches!(self.phase, Phase::Idle | Phase::Failed) {
            return Err(self.wrong_phase("capture"));
        }
        let now = self.clock.now_ms();
        self.t0 = Some(now);
        self.enter(Phase::Capturing, now);
        Ok(())
    }

    /// Instruction text is available and has been handed to the model.
    pub fn begin_awaiting(&mut self) -> Result<(), SessionError> {
        if self.phase != Phase::Capturing {
            return Err(self.wrong_phase("await"));
        }
        let now = self.clock.now_ms();
        self.enter(Phase::AwaitingModel, now);
        Ok(())
    }

    pub fn record_reply(&mut self, raw_reply: &str) {
        self.log.push(LogRecord::Reply {
            session: self.id.clone(),
            timestamp_ms: self.clock.now_ms(),
            raw_reply: raw_reply.to_string(),
        });
    }

    pub fn fail(&mut self, stage: &str, message: &str) -> Result<(), SessionError> {
        if !matches!(self.phase, Phase::Capturing | Phase::AwaitingModel) {
            return Err(self.wrong_phase("fail"));
        }
        let now = self.clock.now_ms();
        self.log.push(LogRecord::Error {
            session: self.id.clone(),
            timestamp_ms: now,
            stage: stage.to_string(),
            message: message.to_string(),
        });
        self.enter(Phase::Failed, now);
        Ok(())
    }

    pub fn install_sequence(
        &mut self,
        seq: CommandSequence,
        report: ParseReport,
    ) -> Result<(), SessionError> {
        if self.phase != Phase::AwaitingModel {
            return Err(self.wrong_phase("install"));
        }
        if seq.is_empty() {
            return Err(SessionError::EmptySequence);
        }
        let now = self.clock.now_ms();
        self.log.push(LogRecord::Sequence {
            session: self.id.clone(),
            timestamp_ms: now,
            source_doc: seq.source_doc.clone(),
            steps: render_sequence(&seq),
            report,
        });
        self.sequence = Some(seq);
        self.cursor = 0;
        self.door_open = false;
        self.events.clear();
        self.enter(Phase::Ready, now);
        Ok(())
    }

    pub fn current_prompt(&self) -> Option<PromptView> {
        let seq = self.sequence.as_ref()?;
        let step = seq.steps.get(self.cursor)?;
        Some(PromptView {
            index: self.cursor,
            item: step.item,
            verb: step.verb,
        })
    }

    /// Moves the cursor by one, clamped to the sequence.
    pub fn advance(&mut self, direction: Direction) -> Result<PromptView, SessionError> {
        if !matches!(self.phase, Phase::Ready | Phase::Running) {
            return Err(self.wrong_phase(match direction {
                Direction::Next => "next",
                Direction::Prev => "prev",
            }));
        }
        let last = self.sequence.as_ref().map_or(0, |s| s.len() - 1);
        self.cursor = match direction {
            Direction::Next => (self.cursor + 1).min(last),
            Direction::Prev => self.cursor.saturating_sub(1),
        };
        if direction == Direction::Next && self.phase == Phase::Ready {
            let now = self.clock.now_ms();
            self.enter(Phase::Running, now);
        }
        Ok(self.current_prompt().expect("cursor within sequence"))
    }

    pub fn act(&mut self, item: ItemId) -> Result<InteractionEvent, SessionError> {
        if !matches!(self.phase, Phase::Ready | Phase::Running) {
            return Err(self.wrong_phase("act"));
        }
        if !self.schema.contains(item) {
            return Err(SessionError::UnknownItem(item));
        }
        if !self.schema.is_interactable(item) {
            return Err(SessionError::NotInteractable(item));
        }
        let mut now = self.clock.now_ms();
        if let Some(prev) = self.events.last() {
            now = now.max(prev.timestamp_ms + 1);
        }
        if self.phase == Phase::Ready {
            self.enter(Phase::Running, now);
        }
        let event = InteractionEvent {
            timestamp_ms: now,
            item,
            verb: item.verb(),
            door_state_at_event: self.door_open,
            gating_violation: self.schema.is_internal(item) && !self.door_open,
        };
        self.events.push(event);
        self.log.push(LogRecord::Event {
            session: self.id.clone(),
            event,
        });
        if item == self.schema.door_item() {
            self.door_open = !self.door_open;
        }
        let target = self.sequence.as_ref().map_or(0, |s| s.len());
        if self.events.len() == target {
            self.t_end = Some(now);
            self.enter(Phase::Done, now);
        }
        Ok(event)
    }

    pub fn executed_items(&self) -> Vec<ItemId> {
        self.events.iter().map(|e| e.item).collect()
    }

    /// Capture to last interaction, in milliseconds.
    pub fn elapsed_ms(&self) -> Result<u64, SessionError> {
        match (self.phase, self.t0, self.t_end) {
            (Phase::Done, Some(t0), Some(t_end)) => Ok(t_end.saturating_sub(t0)),
            _ => Err(self.wrong_phase("elapsed")),
        }
    }

    pub fn to_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|r| r.to_json_line() + "\n")
            .collect()
    }
}
