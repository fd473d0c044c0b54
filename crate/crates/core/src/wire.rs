//! Line-oriented message grammar shared by the TCP and WebSocket transports.
//!
//! Client to server:
//!
//! ```text
//! HELLO <role>
//! TEXT <doc-id>
//! CAPTURE <image-path>
//! NEXT
//! PREV
//! ACT <item>
//! ```
//!
//! Server to client:
//!
//! ```text
//! STATE <phase>
//! SEQ <id>,<id>,...
//! PROMPT <index> <item> <verb>
//! EVT <item> <verb> door=<open|closed> violation=<true|false>
//! DONE <elapsed-ms> <accuracy>
//! ERR <code> <reason>
//! ```
//!
//! Free-text payloads (role, doc id, image path, reason) run to the end of
//! the line; backslash, CR and LF inside them are escaped as `\\`, `\r`
//! and `\n`.

use std::fmt;

use thiserror::Error;

use crate::panel::{ItemId, Verb};
use crate::session::Phase;

/// Longest accepted client line, excluding the terminator.
pub const MAX_LINE_BYTES: usize = 64 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub enum WireMessage {
    Hello(String),
    Capture(String),
    Text(String),
    Next,
    Prev,
    Act(String),
    Seq(Vec<ItemId>),
    Prompt {
        index: usize,
        item: ItemId,
        verb: Verb,
    },
    State(Phase),
    Evt {
        item: ItemId,
        verb: Verb,
        door_open: bool,
        violation: bool,
    },
    Done {
        elapsed_ms: u64,
        accuracy: f64,
    },
    Err {
        code: u16,
        reason: String,
    },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("empty line")]
    Empty,
    #[error("unknown message kind {0:?}")]
    UnknownKind(String),
    #[error("bad payload for {kind}: {detail}")]
    BadPayload { kind: &'static str, detail: String },
}

impl WireError {
    fn payload(kind: &'static str, detail: impl Into<String>) -> Self {
        WireError::BadPayload {
            kind,
            detail: detail.into(),
        }
    }
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(text: &str) -> Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("bad escape \\{other}")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

impl WireMessage {
    pub fn kind(&self) -> &'static str {
        match self {
            WireMessage::Hello(_) => "HELLO",
            WireMessage::Capture(_) => "CAPTURE",
            WireMessage::Text(_) => "TEXT",
            WireMessage::Next => "NEXT",
            WireMessage::Prev => "PREV",
            WireMessage::Act(_) => "ACT",
            WireMessage::Seq(_) => "SEQ",
            WireMessage::Prompt { .. } => "PROMPT",
            WireMessage::State(_) => "STATE",
            WireMessage::Evt { .. } => "EVT",
            WireMessage::Done { .. } => "DONE",
            WireMessage::Err { .. } => "ERR",
        }
    }

    pub fn err(code: u16, reason: impl Into<String>) -> Self {
        WireMessage::Err {
            code,
            reason: reason.into(),
        }
    }

    /// The message as one line, without its terminator.
    pub fn encode(&self) -> String {
        self.to_string()
    }

    /// The message followed by `\n`.
    pub fn encode_line(&self) -> String {
        let mut s = self.to_string();
        s.push('\n');
        s
    }

    /// Parses one line; a single trailing `\n` or `\r\n` is tolerated.
    pub fn parse(line: &str) -> Result<WireMessage, WireError> {
        let line = line.strip_suffix('\n').unwrap_or(line);
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            return Err(WireError::Empty);
        }
        let (kind, payload) = match line.split_once(' ') {
            Some((k, p)) => (k, Some(p)),
            None => (line, None),
        };
        let text = |kind: &'static str| -> Result<String, WireError> {
            let p = payload.filter(|p| !p.is_empty()).ok_or_else(|| WireError::payload(kind, "missing"))?;
            unescape(p).map_err(|e| WireError::payload(kind, e))
        };
        let bare = |kind: &'static str, msg: WireMessage| match payload {
            None => Ok(msg),
            Some(_) => Err(WireError::payload(kind, "takes no payload")),
        };
        let fields = |kind: &'static str, n: usize| -> Result<Vec<&str>, WireError> {
            let f: Vec<&str> = payload.map(|p| p.split(' ').collect()).unwrap_or_default();
            if f.len() != n || f.iter().any(|x| x.is_empty()) {
                return Err(WireError::payload(kind, format!("expected {n} fields")));
            }
            Ok(f)
        };
        let item = |kind: &'static str, s: &str| {
            ItemId::parse_token(s)
                .ok()
                .filter(|i| i.to_string() == s)
                .ok_or_else(|| WireError::payload(kind, format!("bad item {s:?}")))
        };
        let verb = |kind: &'static str, s: &str| {
            s.parse::<Verb>().map_err(|e| WireError::payload(kind, e))
        };

        match kind {
            "HELLO" => text("HELLO").map(WireMessage::Hello),
            "TEXT" => text("TEXT").map(WireMessage::Text),
            "CAPTURE" => text("CAPTURE").map(WireMessage::Capture),
            "NEXT" => bare("NEXT", WireMessage::Next),
            "PREV" => bare("PREV", WireMessage::Prev),
            "ACT" => {
                let f = fields("ACT", 1)?;
                Ok(WireMessage::Act(f[0].to_string()))
            }
            "STATE" => {
                let f = fields("STATE", 1)?;
                Phase::from_wire(f[0])
                    .map(WireMessage::State)
                    .ok_or_else(|| WireError::payload("STATE", format!("bad phase {:?}", f[0])))
            }
            "SEQ" => {
                let f = fields("SEQ", 1)?;
                let items = f[0]
                    .split(',')
                    .map(|s| item("SEQ", s))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(WireMessage::Seq(items))
            }
            "PROMPT" => {
                let f = fields("PROMPT", 3)?;
                let index = parse_uint::<usize>(f[0]).ok_or_else(|| WireError::payload("PROMPT", "bad index"))?;
                Ok(WireMessage::Prompt {
                    index,
                    item: item("PROMPT", f[1])?,
                    verb: verb("PROMPT", f[2])?,
                })
            }
            "EVT" => {
                let f = fields("EVT", 4)?;
                let door_open = match f[2] {
                    "door=open" => true,
                    "door=closed" => false,
                    other => return Err(WireError::payload("EVT", format!("bad door {other:?}"))),
                };
                let violation = match f[3] {
                    "violation=true" => true,
                    "violation=false" => false,
                    other => {
                        return Err(WireError::payload("EVT", format!("bad violation {other:?}")))
                    }
                };
                Ok(WireMessage::Evt {
                    item: item("EVT", f[0])?,
                    verb: verb("EVT", f[1])?,
                    door_open,
                    violation,
                })
            }
            "DONE" => {
                let f = fields("DONE", 2)?;
                let elapsed_ms = parse_uint::<u64>(f[0]).ok_or_else(|| WireError::payload("DONE", "bad elapsed"))?;
                let accuracy = parse_accuracy(f[1]).ok_or_else(|| WireError::payload("DONE", "bad accuracy"))?;
                Ok(WireMessage::Done {
                    elapsed_ms,
                    accuracy,
                })
            }
            "ERR" => {
                let p = payload.ok_or_else(|| WireError::payload("ERR", "missing"))?;
                let (code, reason) = p
                    .split_once(' ')
                    .ok_or_else(|| WireError::payload("ERR", "missing reason"))?;
                let code = parse_uint::<u16>(code)
                    .filter(|c| (100..1000).contains(c))
                    .ok_or_else(|| WireError::payload("ERR", "bad code"))?;
                if reason.is_empty() {
                    return Err(WireError::payload("ERR", "missing reason"));
                }
                Ok(WireMessage::Err {
                    code,
                    reason: unescape(reason).map_err(|e| WireError::payload("ERR", e))?,
                })
            }
            other => Err(WireError::UnknownKind(other.chars().take(32).collect())),
        }
    }
}

fn parse_uint<T: std::str::FromStr>(s: &str) -> Option<T> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Accuracy is always written with four decimals.
fn parse_accuracy(s: &str) -> Option<f64> {
    let (int, frac) = s.split_once('.')?;
    if frac.len() != 4 || parse_uint::<u8>(int).is_none() || parse_uint::<u16>(frac).is_none() {
        return None;
    }
    let v: f64 = s.parse().ok()?;
    (0.0..=1.0).contains(&v).then_some(v)
}

impl fmt::Display for WireMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WireMessage::Hello(role) => write!(f, "HELLO {}", escape(role)),
            WireMessage::Capture(path) => write!(f, "CAPTURE {}", escape(path)),
            WireMessage::Text(id) => write!(f, "TEXT {}", escape(id)),
            WireMessage::Next => f.write_str("NEXT"),
            WireMessage::Prev => f.write_str("PREV"),
            WireMessage::Act(item) => write!(f, "ACT {item}"),
            WireMessage::Seq(items) => {
                let ids: Vec<String> = items.iter().map(|i| i.to_string()).collect();
                write!(f, "SEQ {}", ids.join(","))
            }
            WireMessage::Prompt { index, item, verb } => write!(f, "PROMPT {index} {item} {verb}"),
            WireMessage::State(phase) => write!(f, "STATE {phase}"),
            WireMessage::Evt {
                item,
                verb,
                door_open,
                violation,
            } => write!(
                f,
                "EVT {item} {verb} door={} violation={violation}",
                if *door_open { "open" } else { "closed" }
            ),
            WireMessage::Done {
                elapsed_ms,
                accuracy,
            } => write!(f, "DONE {elapsed_ms} {:.4}", accuracy.clamp(0.0, 1.0)),
            WireMessage::Err { code, reason } => write!(f, "ERR {code} {}", escape(reason)),
        }
    }
}
