//! Instruction acquisition: plain text, files, or an external OCR service.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    TextFile,
    OcrService,
    Inline,
}

/// Normalized instruction text, immutable once produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionDocument {
    pub id: String,
    pub text: String,
    pub source: Source,
    pub word_count: usize,
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("instruction document {0:?} is empty after normalization")]
    Empty(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("OCR transport failure: {0}")]
    OcrTransport(String),
    #[error("OCR job failed: {0}")]
    OcrJobFailed(String),
    #[error("OCR timed out after {0:?}")]
    OcrTimeout(Duration),
    #[error("OCR returned no text")]
    EmptyRecognition,
    #[error("OCR recognized {found} words, below the minimum of {minimum}")]
    PartialRecognition { found: usize, minimum: usize },
}

impl IngestError {
    /// Stable code for session-level reporting.
    pub fn code(&self) -> &'static str {
        match self {
            IngestError::Empty(_) => "empty-document",
            IngestError::Read { .. } => "read-failure",
            IngestError::OcrTransport(_) => "ocr-transport",
            IngestError::OcrJobFailed(_) => "ocr-job-failed",
            IngestError::OcrTimeout(_) => "ocr-timeout",
            IngestError::EmptyRecognition => "ocr-empty",
            IngestError::PartialRecognition { .. } => "ocr-partial",
        }
    }
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Collapses whitespace runs to single spaces and trims the ends.
pub fn normalize(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn ingest_text(raw: &str, id: &str) -> Result<InstructionDocument, IngestError> {
    document(raw, id, Source::Inline)
}

fn document(raw: &str, id: &str, source: Source) -> Result<InstructionDocument, IngestError> {
    let text = normalize(raw);
    if text.is_empty() {
        return Err(IngestError::Empty(id.to_string()));
    }
    let word_count = word_count(&text);
    Ok(InstructionDocument {
        id: id.to_string(),
        text,
        source,
        word_count,
    })
}

/// Reads a UTF-8 text file; the document id is the file stem.
pub fn ingest_file(path: &Path) -> Result<InstructionDocument, IngestError> {
    let raw = std::fs::read_to_string(path).map_err(|source| IngestError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    document(&raw, &stem(path), Source::TextFile)
}

pub(crate) fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "document".to_string())
}

/// An image submitted for recognition.
#[derive(Debug, Clone)]
pub struct ImageBlob {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl ImageBlob {
    pub fn from_file(path: &Path) -> Result<ImageBlob, IngestError> {
        let bytes = std::fs::read(path).map_err(|source| IngestError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(ImageBlob {
            name: stem(path),
            bytes,
        })
    }
}

/// Anything that turns an image into recognized lines, top to bottom.
pub trait OcrClient: Send + Sync {
    fn recognize(&self, image: &ImageBlob) -> Result<Vec<String>, IngestError>;
}

/// Submits the image, concatenates the recognized lines and normalizes.
///
/// `min_words` rejects partial recognitions; zero disables the check.
pub fn ingest_image(
    image: &ImageBlob,
    ocr: &dyn OcrClient,
    min_words: usize,
) -> Result<InstructionDocument, IngestError> {
    let lines = ocr.recognize(image)?;
    let raw = lines.join("\n");
    if normalize(&raw).is_empty() {
        return Err(IngestError::EmptyRecognition);
    }
    let doc = document(&raw, &image.name, Source::OcrService)?;
    if doc.word_count < min_words {
        return Err(IngestError::PartialRecognition {
            found: doc.word_count,
            minimum: min_words,
        });
    }
    Ok(doc)
}

#[derive(Debug, Clone)]
pub struct OcrConfig {
    pub endpoint: String,
    pub key: String,
    pub poll_interval: Duration,
    pub timeout: Duration,
}

impl OcrConfig {
    pub const DEFAULT_POLL_INTERVAL: Duration = Duration::from_millis(500);
    pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

    pub fn new(endpoint: impl Into<String>, key: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            key: key.into(),
            poll_interval: Self::DEFAULT_POLL_INTERVAL,
            timeout: Self::DEFAULT_TIMEOUT,
        }
    }

    /// Reads `OCR_ENDPOINT` and `OCR_KEY`.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var("OCR_ENDPOINT").ok()?;
        let key = std::env::var("OCR_KEY").unwrap_or_default();
        Some(Self::new(endpoint, key))
    }
}

/// Client for an asynchronous read-operation OCR API.
///
/// The image is POSTed to the endpoint; the service answers with an
/// `Operation-Location` header that is polled until the job reports
/// `succeeded` or `failed`. Recognized lines are taken from a top-level
/// `lines` array of strings, or from `analyzeResult.readResults[].lines[].text`.
pub struct HttpOcrClient {
    config: OcrConfig,
    agent: ureq::Agent,
}

pub const OCR_KEY_HEADER: &str = "Ocp-Apim-Subscription-Key";

#[derive(Debug, Deserialize)]
struct ReadOperation {
    status: String,
    #[serde(default)]
    lines: Option<Vec<String>>,
    #[serde(default, rename = "analyzeResult")]
    analyze_result: Option<AnalyzeResult>,
}

#[derive(Debug, Deserialize)]
struct AnalyzeResult {
    #[serde(default, rename = "readResults")]
    read_results: Vec<ReadPage>,
}

#[derive(Debug, Deserialize)]
struct ReadPage {
    #[serde(default)]
    lines: Vec<ReadLine>,
}

#[derive(Debug, Deserialize)]
struct ReadLine {
    text: String,
}

impl HttpOcrClient {
    pub fn new(config: OcrConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, agent }
    }

    fn transport(err: ureq::Error) -> IngestError {
        IngestError::OcrTransport(err.to_string())
    }
}

impl OcrClient for HttpOcrClient {
    fn recognize(&self, image: &ImageBlob) -> Result<Vec<String>, IngestError> {
        let started = Instant::now();
        let response = self
            .agent
            .post(&self.config.endpoint)
            .header(OCR_KEY_HEADER, &self.config.key)
            .content_type("application/octet-stream")
            .send(&image.bytes[..])
            .map_err(Self::transport)?;
        let status = response.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(IngestError::OcrTransport(format!(
                "submit returned HTTP {status}"
            )));
        }
        let operation = response
            .headers()
            .get("operation-location")
            .and_then(|v| v.to_str().ok())
            .map(str::to_string)
            .ok_or_else(|| {
                IngestError::OcrTransport("submit response lacks Operation-Location".into())
            })?;

        loop {
            if started.elapsed() > self.config.timeout {
                return Err(IngestError::OcrTimeout(self.config.timeout));
            }
            let mut response = self
                .agent
                .get(&operation)
                .header(OCR_KEY_HEADER, &self.config.key)
                .call()
                .map_err(Self::transport)?;
            let status = response.status().as_u16();
            if !(200..300).contains(&status) {
                return Err(IngestError::OcrTransport(format!("poll returned HTTP {status}")));
            }
            let op: ReadOperation = response
                .body_mut()
                .read_json()
                .map_err(|e| IngestError::OcrTransport(format!("bad poll payload: {e}")))?;
            match op.status.to_ascii_lowercase().as_str() {
                "succeeded" => {
                    if let Some(lines) = op.lines {
                        return Ok(lines);
                    }
                    let lines = op
                        .analyze_result
                        .map(|r| {
                            r.read_results
                                .into_iter()
                                .flat_map(|p| p.lines.into_iter().map(|l| l.text))
                                .collect()
                        })
                        .unwrap_or_default();
                    return Ok(lines);
                }
                "failed" => return Err(IngestError::OcrJobFailed(operation)),
                _ => thread::sleep(self.config.poll_interval),
            }
        }
    }
}

/// Replays scripted line lists keyed by image name.
#[derive(Debug, Default, Clone)]
pub struct ScriptedOcr {
    pages: HashMap<String, Vec<String>>,
}

impl ScriptedOcr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_page(mut self, name: &str, lines: Vec<String>) -> Self {
        self.pages.insert(name.to_string(), lines);
        self
    }

    /// Loads every `<name>.txt` under `dir`, one recognized line per text line.
    pub fn from_dir(dir: &Path) -> Result<Self, IngestError> {
        let mut pages = HashMap::new();
        let entries = std::fs::read_dir(dir).map_err(|source| IngestError::Read {
            path: dir.to_path_buf(),
            source,
        })?;
        for entry in entries.flatten() {
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "txt") {
                let text = std::fs::read_to_string(&path).map_err(|source| IngestError::Read {
                    path: path.clone(),
                    source,
                })?;
                pages.insert(stem(&path), text.lines().map(str::to_string).collect());
            }
        }
        Ok(Self { pages })
    }
}

impl OcrClient for ScriptedOcr {
    fn recognize(&self, image: &ImageBlob) -> Result<Vec<String>, IngestError> {
        self.pages
            .get(&image.name)
            .cloned()
            .ok_or_else(|| IngestError::OcrJobFailed(format!("no scripted page for {:?}", image.name)))
    }
}

/// Progress of a background recognition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OcrStatus {
    Pending,
    Complete(InstructionDocument),
    Failed { code: &'static str, message: String },
}

impl fmt::Display for OcrStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OcrStatus::Pending => f.write_str("pending"),
            OcrStatus::Complete(_) => f.write_str("complete"),
            OcrStatus::Failed { .. } => f.write_str("failed"),
        }
    }
}

/// A recognition running on its own thread.
pub struct OcrJob {
    status: Arc<Mutex<OcrStatus>>,
    handle: Option<thread::JoinHandle<()>>,
}

impl OcrJob {
    pub fn spawn(image: ImageBlob, ocr: Arc<dyn OcrClient>, min_words: usize) -> OcrJob {
        let status = Arc::new(Mutex::new(OcrStatus::Pending));
        let slot = Arc::clone(&status);
        let handle = thread::spawn(move || {
            let outcome = match ingest_image(&image, ocr.as_ref(), min_words) {
                Ok(doc) => OcrStatus::Complete(doc),
                Err(e) => OcrStatus::Failed {
                    code: e.code(),
                    message: e.to_string(),
                },
            };
            *slot.lock().expect("ocr status lock") = outcome;
        });
        OcrJob {
            status,
            handle: Some(handle),
        }
    }

    pub fn status(&self) -> OcrStatus {
        self.status.lock().expect("ocr status lock").clone()
    }

    /// Blocks until the job leaves the pending state.
    pub fn wait(mut self) -> OcrStatus {
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
        self.status()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapses_whitespace() {
        let doc = ingest_text("  tighten   the bolt\n", "d").unwrap();
        assert_eq!(doc.text, "tighten the bolt");
        assert_eq!(doc.word_count, 3);
        assert_eq!(doc.source, Source::Inline);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(ingest_text("", "d"), Err(IngestError::Empty(_))));
        assert!(matches!(ingest_text(" \n\t ", "d"), Err(IngestError::Empty(_))));
    }

    #[test]
    fn scripted_ocr_preserves_line_order() {
        let ocr = ScriptedOcr::new().with_page(
            "label",
            vec!["Open the door".into(), "Unplug S_02".into(), "Close the door".into()],
        );
        let image = ImageBlob {
            name: "label".into(),
            bytes: vec![0u8; 4],
        };
        let doc = ingest_image(&image, &ocr, 0).unwrap();
        assert_eq!(doc.text, "Open the door Unplug S_02 Close the door");
        assert_eq!(doc.source, Source::OcrService);
        assert_eq!(doc.id, "label");
    }

    #[test]
    fn blank_recognition_is_an_error() {
        let ocr = ScriptedOcr::new().with_page("blank", vec![]);
        let image = ImageBlob {
            name: "blank".into(),
            bytes: vec![],
        };
        let err = ingest_image(&image, &ocr, 0).unwrap_err();
        assert_eq!(err.code(), "ocr-empty");
    }

    #[test]
    fn partial_recognition_below_minimum() {
        let ocr = ScriptedOcr::new().with_page("p", vec!["two words".into()]);
        let image = ImageBlob {
            name: "p".into(),
            bytes: vec![],
        };
        let err = ingest_image(&image, &ocr, 5).unwrap_err();
        assert!(matches!(err, IngestError::PartialRecognition { found: 2, minimum: 5 }));
    }

    #[test]
    fn background_job_reports_completion() {
        let ocr: Arc<dyn OcrClient> =
            Arc::new(ScriptedOcr::new().with_page("x", vec!["press B_01".into()]));
        let job = OcrJob::spawn(
            ImageBlob {
                name: "x".into(),
                bytes: vec![],
            },
            ocr,
            0,
        );
        match job.wait() {
            OcrStatus::Complete(doc) => assert_eq!(doc.text, "press B_01"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn error_codes_are_distinct() {
        let codes = [
            IngestError::OcrTransport(String::new()).code(),
            IngestError::OcrJobFailed(String::new()).code(),
            IngestError::EmptyRecognition.code(),
            IngestError::OcrTimeout(Duration::ZERO).code(),
        ];
        let unique: std::collections::HashSet<_> = codes.iter().collect();
        assert_eq!(unique.len(), codes.len());
    }
}
