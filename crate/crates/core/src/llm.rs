//! Chat-completion gateway with a live HTTP backend and a scripted one.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fixtures::FixtureSet;

pub const DEFAULT_MODEL: &str = "gpt-4";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const MAX_RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    pub temperature: f64,
    pub timeout: Duration,
    /// Instruction fixture the prompt was built from, used by scripted lookup.
    pub fixture_id: Option<String>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            model: DEFAULT_MODEL.to_string(),
            prompt: prompt.into(),
            temperature: 0.0,
            timeout: DEFAULT_TIMEOUT,
            fixture_id: None,
        }
    }

    pub fn with_fixture(mut self, id: impl Into<String>) -> Self {
        self.fixture_id = Some(id.into());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Live,
    Scripted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub latency: Duration,
    pub backend: BackendKind,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication rejected (HTTP {0})")]
    Auth(u16),
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("endpoint returned HTTP {0}")]
    Status(u16),
    #[error("malformed response envelope: {0}")]
    MalformedEnvelope(String),
    #[error("no scripted reply for prompt (fixture {fixture:?}, hash {hash})")]
    ScriptedMiss { fixture: Option<String>, hash: String },
}

impl LlmError {
    fn is_transient(&self) -> bool {
        matches!(self, LlmError::Transport(_))
            || matches!(self, LlmError::Status(code) if *code == 429 || *code >= 500)
    }
}

pub trait CompletionBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Returns the raw text of the first reply.
    fn send(&self, req: &CompletionRequest) -> Result<String, LlmError>;
}

/// Sends the request and measures wall-clock latency.
pub fn complete(
    req: &CompletionRequest,
    backend: &dyn CompletionBackend,
) -> Result<CompletionResult, LlmError> {
    let started = Instant::now();
    let text = backend.send(req)?;
    Ok(CompletionResult {
        text,
        latency: started.elapsed(),
        backend: backend.kind(),
    })
}

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Deterministic replies keyed by fixture id, then by prompt hash.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    by_fixture: BTreeMap<String, String>,
    by_hash: BTreeMap<String, String>,
    latency: Duration,
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_fixtures(fixtures: &FixtureSet) -> Self {
        let by_fixture = fixtures
            .replies
            .keys()
            .filter_map(|id| fixtures.reply(id).map(|r| (id.clone(), r.to_string())))
            .collect();
        Self {
            by_fixture,
            ..Self::default()
        }
    }

    pub fn with_reply(mut self, fixture_id: &str, reply: &str) -> Self {
        self.by_fixture
            .insert(fixture_id.to_string(), reply.to_string());
        self
    }

    pub fn with_prompt_reply(mut self, prompt: &str, reply: &str) -> Self {
        self.by_hash.insert(prompt_hash(prompt), reply.to_string());
        self
    }

    /// Sleeps this long before answering, to emulate model latency.
    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }
}

impl CompletionBackend for ScriptedBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Scripted
    }

    fn send(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let hash = prompt_hash(&req.prompt);
        let reply = req
            .fixture_id
            .as_ref()
            .and_then(|id| self.by_fixture.get(id))
            .or_else(|| self.by_hash.get(&hash))
            .cloned()
            .ok_or_else(|| LlmError::ScriptedMiss {
                fixture: req.fixture_id.clone(),
                hash,
            })?;
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        Ok(reply)
    }
}

/// Client for a standard `{base}/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct LiveBackend {
    base_url: String,
    api_key: String,
    retry_backoff: Duration,
    agent: ureq::Agent,
}

#[derive(Debug, Deserialize)]
struct ChatEnvelope {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    content: Option<String>,
}

impl LiveBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key: api_key.into(),
            retry_backoff: Duration::from_millis(500),
            agent,
        }
    }

    /// Reads `LLM_BASE_URL` (default `https://api.openai.com/v1`) and `LLM_API_KEY`.
    pub fn from_env() -> Option<Self> {
        let key = std::env::var("LLM_API_KEY").ok()?;
        let base = std::env::var("LLM_BASE_URL")
            .unwrap_or_else(|_| "https://api.openai.com/v1".to_string());
        Some(Self::new(base, key))
    }

    /// First retry waits this long; each further retry doubles it.
    pub fn with_retry_backoff(mut self, backoff: Duration) -> Self {
        self.retry_backoff = backoff;
        self
    }

    pub fn request_body(req: &CompletionRequest) -> serde_json::Value {
        json!({
            "model": req.model,
            "messages": [{ "role": "user", "content": req.prompt }],
            "temperature": req.temperature,
        })
    }

    fn attempt(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let url = format!("{}/chat/completions", self.base_url);
        let result = self
            .agent
            .post(&url)
            .config()
            .timeout_global(Some(req.timeout))
            .build()
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(Self::request_body(req));
        let mut response = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(LlmError::Timeout(req.timeout)),
            Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => {
                return Err(LlmError::Timeout(req.timeout))
            }
            Err(e) => return Err(LlmError::Transport(e.to_string())),
        };
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Err(LlmError::Auth(status)),
            _ => return Err(LlmError::Status(status)),
        }
        let body = match response.body_mut().read_to_string() {
            Ok(b) => b,
            Err(ureq::Error::Timeout(_)) => return Err(LlmError::Timeout(req.timeout)),
            Err(e) => return Err(LlmError::Transport(e.to_string())),
        };
        let envelope: ChatEnvelope = serde_json::from_str(&body)
            .map_err(|e| LlmError::MalformedEnvelope(e.to_string()))?;
        envelope
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedEnvelope("no choices[0].message.content".into()))
    }
}

impl CompletionBackend for LiveBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Live
    }

    fn send(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let mut retries = 0;
        loop {
            match self.attempt(req) {
                Err(e) if e.is_transient() && retries < MAX_RETRIES => {
                    let wait = self.retry_backoff * 2u32.pow(retries);
                    tracing::warn!(error = %e, retry = retries + 1, ?wait, "retrying completion");
                    std::thread::sleep(wait);
                    retries += 1;
                }
                other => return other,
            }
        }
    }
}
