use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, ChatBackend, ChatMessage, Role};

/// One line of a JSON-lines transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TranscriptRecord {
    /// Everything needed to rerun the episode: task, options, library.
    Header { header: serde_json::Value },
    Exchange(Exchange),
    /// Terminal record carrying the episode result.
    Result { result: serde_json::Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub stage: String,
    pub prompt: Vec<ChatMessage>,
    pub prompt_hash: String,
    pub response: String,
    /// Milliseconds since the Unix epoch; informational only.
    pub timestamp_ms: u64,
}

/// SHA-256 over the canonical JSON of the messages.
pub fn prompt_hash(messages: &[ChatMessage]) -> String {
    let bytes = serde_json::to_vec(messages).expect("messages always serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// Stage label from the `STAGE: <name>` first line of the last user message.
pub fn stage_of(messages: &[ChatMessage]) -> String {
    messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .and_then(|m| m.content.lines().next())
        .and_then(|line| line.strip_prefix("STAGE: "))
        .map_or_else(|| "unknown".to_string(), |s| s.trim().to_string())
}

#[derive(Debug, Default)]
struct SinkState {
    records: Vec<TranscriptRecord>,
    file: Option<BufWriter<File>>,
}

/// Append-only record sink shared by clones; optionally mirrored to a file.
#[derive(Debug, Clone, Default)]
pub struct TranscriptSink {
    state: Arc<Mutex<SinkState>>,
}

impl TranscriptSink {
    pub fn memory() -> Self {
        Self::default()
    }

    pub fn create(path: &Path) -> Result<Self, BackendError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let file = BufWriter::new(File::create(path)?);
        Ok(TranscriptSink { state: Arc::new(Mutex::new(SinkState { records: vec![], file: Some(file) })) })
    }

    pub fn push(&self, record: TranscriptRecord) -> Result<(), BackendError> {
        let mut state = self.state.lock().expect("sink lock");
        if let Some(file) = state.file.as_mut() {
            let line = serde_json::to_string(&record).map_err(|e| BackendError::Transcript(e.to_string()))?;
            writeln!(file, "{line}")?;
            file.flush()?;
        }
        state.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> Vec<TranscriptRecord> {
        self.state.lock().expect("sink lock").records.clone()
    }

    pub fn exchange_count(&self) -> usize {
        self.state.lock().expect("sink lock").records.iter().filter(|r| matches!(r, TranscriptRecord::Exchange(_))).count()
    }
}

/// Pass-through decorator that logs every successful exchange.
pub struct RecordingBackend<B> {
    inner: B,
    sink: TranscriptSink,
}

pub fn record_wrap<B: ChatBackend>(inner: B, sink: TranscriptSink) -> RecordingBackend<B> {
    RecordingBackend { inner, sink }
}

impl<B> RecordingBackend<B> {
    pub fn sink(&self) -> &TranscriptSink {
        &self.sink
    }

    pub fn into_inner(self) -> B {
        self.inner
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let response = self.inner.complete(messages)?;
        let timestamp_ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        self.sink.push(TranscriptRecord::Exchange(Exchange {
            stage: stage_of(messages),
            prompt: messages.to_vec(),
            prompt_hash: prompt_hash(messages),
            response: response.clone(),
            timestamp_ms,
        }))?;
        Ok(response)
    }
}

/// Serves recorded responses in order. The expected hash is recomputed from
/// the recorded messages, so an edited prompt in the file also diverges.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    exchanges: Vec<Exchange>,
    next: usize,
}

impl ReplayBackend {
    pub fn new(records: &[TranscriptRecord]) -> Self {
        let exchanges = records
            .iter()
            .filter_map(|r| match r {
                TranscriptRecord::Exchange(e) => Some(e.clone()),
                _ => None,
            })
            .collect();
        ReplayBackend { exchanges, next: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.exchanges.len() - self.next
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let got_hash = prompt_hash(messages);
        let Some(exchange) = self.exchanges.get(self.next) else {
            return Err(BackendError::ReplayDivergence { expected_hash: "end of transcript".into(), got_hash });
        };
        let expected_hash = prompt_hash(&exchange.prompt);
        if expected_hash != got_hash {
            return Err(BackendError::ReplayDivergence { expected_hash, got_hash });
        }
        self.next += 1;
        Ok(exchange.response.clone())
    }
}

pub fn read_transcript(path: &Path) -> Result<Vec<TranscriptRecord>, BackendError> {
    let file = File::open(path).map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
    let mut records = vec![];
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line)
            .map_err(|e| BackendError::Transcript(format!("{} line {}: {e}", path.display(), n + 1)))?;
        records.push(record);
    }
    Ok(records)
}
