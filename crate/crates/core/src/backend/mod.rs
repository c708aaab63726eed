//! Text-completion backends and the transcript every call leaves behind.
//!
//! A [`CompletionBackend`] answers one request. [`RecordingBackend`] wraps any
//! backend, assigns call ids, and keeps the ordered transcript that token
//! reports and replay fixtures are built from.

mod live;
mod replay;
mod scripted;

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use live::{LiveBackend, LiveConfig};
pub use replay::ReplayBackend;
pub use scripted::{EchoBackend, ScriptRule, ScriptedBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl CompletionRequest {
    /// Content hash used to match requests against recorded calls.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::json!({
            "prompt": self.prompt,
            "model": self.model,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        });
        hex_digest(canonical.to_string().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub call_id: u64,
    pub role_tag: String,
    pub request: CompletionRequest,
    pub response: CompletionResponse,
    pub timestamp: DateTime<Utc>,
    #[serde(default)]
    pub retries: u32,
}

/// Model, sampling temperature and token budget for a family of calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoding {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for Decoding {
    fn default() -> Self {
        Self {
            model: "gpt-4o-mini".into(),
            temperature: 0.7,
            max_tokens: 2048,
            seed: None,
        }
    }
}

impl Decoding {
    pub fn request(&self, prompt: impl Into<String>) -> CompletionRequest {
        CompletionRequest {
            prompt: prompt.into(),
            model: self.model.clone(),
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: self.seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed: Some(seed),
            ..self.clone()
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("network failure after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("no recorded call matches request {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("quota or rate limit exhausted: {0}")]
    Quota(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("no scripted rule matches the prompt")]
    NoScriptedRule,
    #[error("backend misconfigured: {0}")]
    Config(String),
    #[error("empty prompt")]
    EmptyPrompt,
}

/// What a backend returns for one call, before it is stamped into the
/// transcript.
#[derive(Debug, Clone, Default)]
pub struct Reply {
    pub text: String,
    /// Provider-reported counts; estimated locally when absent.
    pub input_tokens: Option<u64>,
    pub output_tokens: Option<u64>,
    /// Overrides measured latency (replay reproduces recorded timing).
    pub latency_ms: Option<u64>,
    pub timestamp: Option<DateTime<Utc>>,
    pub retries: u32,
}

impl Reply {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            ..Self::default()
        }
    }
}

pub trait CompletionBackend: Send + Sync {
    fn call(&self, request: &CompletionRequest) -> Result<Reply, BackendError>;
}

/// Local token estimate used when a provider reports none: one token per
/// four characters, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Wraps a backend and records every successful call.
///
/// Call ids start at 1 and are assigned under the same lock that appends the
/// record, so transcript order equals call-id order.
pub struct RecordingBackend {
    inner: Box<dyn CompletionBackend>,
    log: Mutex<Vec<TranscriptRecord>>,
}

impl RecordingBackend {
    pub fn new(inner: impl CompletionBackend + 'static) -> Self {
        Self {
            inner: Box::new(inner),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn boxed(inner: Box<dyn CompletionBackend>) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn complete(&self, role_tag: &str, request: &CompletionRequest) -> Result<TranscriptRecord, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let started = Instant::now();
        let reply = self.inner.call(request)?;
        let elapsed = started.elapsed().as_millis() as u64;
        let response = CompletionResponse {
            input_tokens: reply.input_tokens.unwrap_or_else(|| estimate_tokens(&request.prompt)),
            output_tokens: reply.output_tokens.unwrap_or_else(|| estimate_tokens(&reply.text)),
            latency_ms: reply.latency_ms.unwrap_or(elapsed),
            text: reply.text,
        };
        let timestamp = reply.timestamp.unwrap_or_else(Utc::now);

        let mut log = self.log.lock().expect("transcript lock poisoned");
        let record = TranscriptRecord {
            call_id: log.len() as u64 + 1,
            role_tag: role_tag.to_string(),
            request: request.clone(),
            response,
            timestamp,
            retries: reply.retries,
        };
        log.push(record.clone());
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.log.lock().expect("transcript lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.log.lock().expect("transcript lock poisoned").clone()
    }

    /// Records whose call id is greater than `after`.
    pub fn records_after(&self, after: u64) -> Vec<TranscriptRecord> {
        let log = self.log.lock().expect("transcript lock poisoned");
        log.iter().filter(|r| r.call_id > after).cloned().collect()
    }

    /// Highest call id issued so far (0 before the first call).
    pub fn last_call_id(&self) -> u64 {
        self.len() as u64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub total: u64,
}

impl TokenTotals {
    fn add(&mut self, r: &CompletionResponse) {
        self.input_tokens += r.input_tokens;
        self.output_tokens += r.output_tokens;
        self.total = self.input_tokens + self.output_tokens;
    }
}

pub fn transcript_totals(records: &[TranscriptRecord]) -> TokenTotals {
    let mut t = TokenTotals::default();
    for r in records {
        t.add(&r.response);
    }
    t
}

pub fn totals_by_role(records: &[TranscriptRecord]) -> BTreeMap<String, TokenTotals> {
    let mut groups: BTreeMap<String, TokenTotals> = BTreeMap::new();
    for r in records {
        groups.entry(r.role_tag.clone()).or_default().add(&r.response);
    }
    groups
}

pub fn write_transcript(path: &Path, records: &[TranscriptRecord]) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_transcript(path: &Path) -> io::Result<Vec<TranscriptRecord>> {
    let file = io::BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in file.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        records.push(record);
    }
    Ok(records)
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
