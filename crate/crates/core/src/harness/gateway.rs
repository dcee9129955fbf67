//! Chat-completions client with bounded retries, a concurrency cap and an
//! append-only audit log.

use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::sync::Semaphore;

use super::config::EndpointConfig;

pub const DEFAULT_TEMPERATURE: f64 = 0.2;
pub const DEFAULT_MAX_TOKENS: u32 = 2048;
const REDACTED: &str = "[REDACTED]";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned HTTP {0}")]
    HttpStatus(u16),
    #[error("transport error: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self { model: model.into(), messages, temperature: DEFAULT_TEMPERATURE, max_tokens: DEFAULT_MAX_TOKENS }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    #[serde(default)]
    pub prompt_tokens: u64,
    #[serde(default)]
    pub completion_tokens: u64,
    #[serde(default)]
    pub total_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatReply {
    pub content: String,
    pub finish_reason: Option<String>,
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    /// Call sequence number; shared by all attempts of one call.
    pub call: u64,
    /// 1-based attempt within the call.
    pub attempt: u32,
    pub request: ChatRequest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// In-memory audit trail, optionally mirrored to a JSON-lines file.
#[derive(Debug, Default)]
pub struct AuditLog {
    entries: Mutex<Vec<AuditEntry>>,
    path: Option<PathBuf>,
    secrets: Vec<String>,
}

impl AuditLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: PathBuf) -> Self {
        Self { path: Some(path), ..Self::default() }
    }

    fn redact(&self, text: &str) -> String {
        self.secrets
            .iter()
            .filter(|s| !s.is_empty())
            .fold(text.to_string(), |acc, s| acc.replace(s.as_str(), REDACTED))
    }

    fn record(&self, mut entry: AuditEntry) {
        for m in &mut entry.request.messages {
            m.content = self.redact(&m.content);
        }
        entry.reply = entry.reply.map(|r| self.redact(&r));
        entry.error = entry.error.map(|r| self.redact(&r));
        if let Some(path) = &self.path {
            let line = serde_json::to_string(&entry).expect("audit entries serialize");
            let written = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .and_then(|mut f| writeln!(f, "{line}"));
            if let Err(e) = written {
                tracing::warn!(path = %path.display(), "audit log write failed: {e}");
            }
        }
        self.entries.lock().expect("audit lock").push(entry);
    }

    pub fn entries(&self) -> Vec<AuditEntry> {
        self.entries.lock().expect("audit lock").clone()
    }
}

pub struct ChatGateway {
    client: reqwest::Client,
    config: EndpointConfig,
    api_key: Option<String>,
    permits: Semaphore,
    audit: Arc<AuditLog>,
    calls: std::sync::atomic::AtomicU64,
}

impl ChatGateway {
    /// Reads the bearer token from the environment variable named in
    /// `config.api_key_env`.
    pub fn new(config: EndpointConfig, mut audit: AuditLog) -> Result<Self, GatewayError> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        if let Some(k) = &api_key {
            audit.secrets.push(k.clone());
        }
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            permits: Semaphore::new(config.max_concurrency.max(1)),
            config,
            api_key,
            audit: Arc::new(audit),
            calls: Default::default(),
        })
    }

    pub fn model(&self) -> &str {
        &self.config.model
    }

    pub fn audit(&self) -> Arc<AuditLog> {
        self.audit.clone()
    }

    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest::new(self.config.model.clone(), messages)
    }

    pub async fn chat(&self, request: &ChatRequest) -> Result<ChatReply, GatewayError> {
        let _permit = self.permits.acquire().await.map_err(|e| GatewayError::Transport(e.to_string()))?;
        let call = self.calls.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        });
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let mut entry =
                AuditEntry { call, attempt, request: request.clone(), status: None, reply: None, error: None };
            let mut builder = self.client.post(&url).json(&body);
            if let Some(key) = &self.api_key {
                builder = builder.bearer_auth(key);
            }
            let resp = match builder.send().await {
                Ok(r) => r,
                Err(e) => {
                    let err = if e.is_timeout() { GatewayError::Timeout } else { GatewayError::Transport(e.to_string()) };
                    entry.error = Some(err.to_string());
                    self.audit.record(entry);
                    return Err(err);
                }
            };
            let status = resp.status().as_u16();
            entry.status = Some(status);
            let text = match resp.text().await {
                Ok(t) => t,
                Err(e) => {
                    let err = if e.is_timeout() { GatewayError::Timeout } else { GatewayError::Transport(e.to_string()) };
                    entry.error = Some(err.to_string());
                    self.audit.record(entry);
                    return Err(err);
                }
            };
            entry.reply = Some(text.clone());
            self.audit.record(entry);
            if (200..300).contains(&status) {
                return parse_reply(&text);
            }
            let retryable = status == 429 || (500..600).contains(&status);
            if !retryable || attempt > self.config.retries {
                return Err(GatewayError::HttpStatus(status));
            }
            let delay = self.config.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
            tracing::debug!(status, attempt, delay, "retrying chat call");
            tokio::time::sleep(Duration::from_millis(delay)).await;
        }
    }
}

fn parse_reply(text: &str) -> Result<ChatReply, GatewayError> {
    #[derive(Deserialize)]
    struct Body {
        choices: Vec<Choice>,
        #[serde(default)]
        usage: Option<Usage>,
    }
    #[derive(Deserialize)]
    struct Choice {
        message: ChatMessage,
        #[serde(default)]
        finish_reason: Option<String>,
    }
    let body: Body =
        serde_json::from_str(text).map_err(|e| GatewayError::Transport(format!("unreadable reply body: {e}")))?;
    let choice = body
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Transport("reply has no choices".into()))?;
    Ok(ChatReply { content: choice.message.content, finish_reason: choice.finish_reason, usage: body.usage })
}
