//! Chat-completion backends behind one trait: a live HTTP client, scripted
//! fixtures for offline runs, and replay of recorded transcripts.

#[cfg(feature = "http")]
mod http;
mod transcript;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(feature = "http")]
pub use http::HttpBackend;
pub use transcript::{
    prompt_hash, read_transcript, record_wrap, stage_of, Exchange, RecordingBackend, ReplayBackend, TranscriptRecord,
    TranscriptSink,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("network error: {0}")]
    Network(String),
    #[error("rate limited by the endpoint")]
    RateLimited,
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no unused fixture rule matches the prompt starting with {prompt_head:?}")]
    FixtureExhausted { prompt_head: String },
    #[error("replay diverged: expected prompt hash {expected_hash}, got {got_hash}")]
    ReplayDivergence { expected_hash: String, got_hash: String },
    #[error("transcript: {0}")]
    Transcript(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for BackendError {
    fn from(e: std::io::Error) -> Self {
        BackendError::Io(e.to_string())
    }
}

/// A chat-completion endpoint. Instances are session scoped: one per episode.
pub trait ChatBackend {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        (**self).complete(messages)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &mut B {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        (**self).complete(messages)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Scripted,
    Replay,
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    /// First retry delay; each further retry doubles it.
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    /// Name of the environment variable holding the API key. The key itself
    /// never appears in configs or transcripts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript_path: Option<PathBuf>,
}

impl BackendConfig {
    fn bare(kind: BackendKind) -> Self {
        BackendConfig {
            kind,
            endpoint: None,
            model: None,
            temperature: 0.0,
            max_retries: default_retries(),
            backoff_base_ms: default_backoff_ms(),
            api_key_env: None,
            fixture_path: None,
            transcript_path: None,
        }
    }

    pub fn scripted(fixture: impl Into<PathBuf>) -> Self {
        BackendConfig { fixture_path: Some(fixture.into()), ..Self::bare(BackendKind::Scripted) }
    }

    pub fn replay(transcript: impl Into<PathBuf>) -> Self {
        BackendConfig { transcript_path: Some(transcript.into()), ..Self::bare(BackendKind::Replay) }
    }

    pub fn http(endpoint: impl Into<String>, model: impl Into<String>, api_key_env: impl Into<String>) -> Self {
        BackendConfig {
            endpoint: Some(endpoint.into()),
            model: Some(model.into()),
            api_key_env: Some(api_key_env.into()),
            ..Self::bare(BackendKind::Http)
        }
    }

    /// Parses the `kind:detail` form: `scripted:fixture.json`,
    /// `replay:transcript.jsonl` or `http:config.json`, where the http
    /// detail is a JSON file holding a full config.
    pub fn from_spec(spec: &str) -> Result<Self, BackendError> {
        let (kind, detail) = spec
            .split_once(':')
            .ok_or_else(|| BackendError::Config(format!("expected kind:detail, got `{spec}`")))?;
        if detail.is_empty() {
            return Err(BackendError::Config(format!("missing detail after `{kind}:`")));
        }
        let config = match kind {
            "scripted" => Self::scripted(detail),
            "replay" => Self::replay(detail),
            "http" => Self::load(Path::new(detail))?,
            other => return Err(BackendError::Config(format!("unknown backend kind `{other}`"))),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let missing = |field: &str| Err(BackendError::Config(format!("{:?} backend needs `{field}`", self.kind)));
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(BackendError::Config("temperature must be >= 0".into()));
        }
        match self.kind {
            BackendKind::Http if self.endpoint.is_none() => missing("endpoint"),
            BackendKind::Http if self.model.is_none() => missing("model"),
            BackendKind::Scripted if self.fixture_path.is_none() => missing("fixture_path"),
            BackendKind::Replay if self.transcript_path.is_none() => missing("transcript_path"),
            _ => Ok(()),
        }
    }
}

/// A fresh backend session for `config`.
pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn ChatBackend + Send>, BackendError> {
    config.validate()?;
    match config.kind {
        BackendKind::Scripted => {
            Ok(Box::new(ScriptedBackend::load(config.fixture_path.as_deref().expect("validated"))?))
        }
        BackendKind::Replay => {
            let records = read_transcript(config.transcript_path.as_deref().expect("validated"))?;
            Ok(Box::new(ReplayBackend::new(&records)))
        }
        #[cfg(feature = "http")]
        BackendKind::Http => Ok(Box::new(HttpBackend::new(config.clone())?)),
        #[cfg(not(feature = "http"))]
        BackendKind::Http => Err(BackendError::Config("built without the `http` feature".into())),
    }
}

/// One fixture rule: a prompt prefix and the canned response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub response: String,
}

/// Answers from an ordered rule list. The last user message picks the unused
/// rule with the longest matching prefix (file order breaks ties); each rule
/// answers once.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    rules: Vec<FixtureRule>,
    used: Vec<bool>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<FixtureRule>) -> Self {
        let used = vec![false; rules.len()];
        ScriptedBackend { rules, used }
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let rules = serde_json::from_str(&text).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(rules))
    }

    pub fn remaining(&self) -> usize {
        self.used.iter().filter(|u| !**u).count()
    }
}

fn last_user(messages: &[ChatMessage]) -> &str {
    messages.iter().rev().find(|m| m.role == Role::User).map_or("", |m| m.content.as_str())
}

impl ChatBackend for ScriptedBackend {
    fn complete(&mut self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let prompt = last_user(messages);
        let mut best: Option<usize> = None;
        for (i, rule) in self.rules.iter().enumerate() {
            if self.used[i] || !prompt.starts_with(&rule.pattern) {
                continue;
            }
            if best.is_none_or(|b| rule.pattern.len() > self.rules[b].pattern.len()) {
                best = Some(i);
            }
        }
        match best {
            Some(i) => {
                self.used[i] = true;
                Ok(self.rules[i].response.clone())
            }
            None => Err(BackendError::FixtureExhausted { prompt_head: prompt.chars().take(60).collect() }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(p: &str, r: &str) -> FixtureRule {
        FixtureRule { pattern: p.into(), response: r.into() }
    }

    #[test]
    fn consume_once() {
        let mut b = ScriptedBackend::new(vec![rule("STAGE", "one")]);
        let m = [ChatMessage::user("STAGE: inference")];
        assert_eq!(b.complete(&m).unwrap(), "one");
        assert!(matches!(b.complete(&m), Err(BackendError::FixtureExhausted { .. })));
    }

    #[test]
    fn longest_prefix_then_file_order() {
        let mut b = ScriptedBackend::new(vec![
            rule("STAGE:", "short"),
            rule("STAGE: reflection", "long"),
            rule("STAGE: reflection", "long again"),
        ]);
        let m = [ChatMessage::system("sys"), ChatMessage::user("STAGE: reflection\n...")];
        assert_eq!(b.complete(&m).unwrap(), "long");
        assert_eq!(b.complete(&m).unwrap(), "long again");
        assert_eq!(b.complete(&m).unwrap(), "short");
    }

    #[test]
    fn spec_forms() {
        assert_eq!(BackendConfig::from_spec("scripted:f.json").unwrap().fixture_path.unwrap(), PathBuf::from("f.json"));
        assert_eq!(BackendConfig::from_spec("replay:t.jsonl").unwrap().kind, BackendKind::Replay);
        assert!(BackendConfig::from_spec("carrier:x").is_err());
        assert!(BackendConfig::from_spec("scripted").is_err());
        assert!(BackendConfig::from_spec("scripted:").is_err());
    }
}
