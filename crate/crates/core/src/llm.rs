//! Chat-completion client and reply parsing.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TEMPERATURE: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed reply: {0}")]
    MalformedReply(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

pub trait ChatClient: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, LlmError>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatClientConfig {
    /// Full URL of an OpenAI-style `/chat/completions` endpoint.
    pub url: String,
    pub model: String,
    /// Environment variable holding the API key, if any.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Cap on concurrent requests across all users of one client.
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
}

fn default_api_key_env() -> String {
    "LLM_API_KEY".into()
}
fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_max_in_flight() -> usize {
    4
}

impl ChatClientConfig {
    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        ChatClientConfig {
            url: url.into(),
            model: model.into(),
            api_key_env: default_api_key_env(),
            temperature: DEFAULT_TEMPERATURE,
            timeout_secs: default_timeout_secs(),
            max_in_flight: default_max_in_flight(),
        }
    }
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().expect("gate poisoned");
        while *n >= self.limit {
            n = self.freed.wait(n).expect("gate poisoned");
        }
        *n += 1;
        GateGuard { gate: self }
    }
}

struct GateGuard<'a> {
    gate: &'a Gate,
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.gate.in_flight.lock().expect("gate poisoned") -= 1;
        self.gate.freed.notify_one();
    }
}

/// Blocking HTTP client for OpenAI-compatible chat endpoints.
pub struct HttpChatClient {
    config: ChatClientConfig,
    agent: ureq::Agent,
    gate: Gate,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

impl HttpChatClient {
    pub fn new(config: ChatClientConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        let limit = config.max_in_flight.max(1);
        HttpChatClient {
            config,
            agent,
            gate: Gate {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                limit,
            },
        }
    }

    pub fn config(&self) -> &ChatClientConfig {
        &self.config
    }
}

impl ChatClient for HttpChatClient {
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String, LlmError> {
        let _slot = self.gate.enter();
        let body = serde_json::json!({
            "model": self.config.model,
            "messages": messages,
            "temperature": temperature,
        });
        log::debug!("chat request to {}: {body}", self.config.url);
        let mut req = self.agent.post(&self.config.url);
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        log::debug!("chat response: {text}");
        let parsed: CompletionResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::MalformedReply(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedReply("no choices in completion".into()))
    }
}

/// Replays canned replies in order and records every request. Once the
/// script runs out it keeps failing with a transport error.
#[derive(Default)]
pub struct ScriptedChatClient {
    replies: Mutex<VecDeque<Result<String, LlmError>>>,
    requests: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedChatClient {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedChatClient {
            replies: Mutex::new(replies.into_iter().map(|s| Ok(s.into())).collect()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn from_results(replies: Vec<Result<String, LlmError>>) -> Self {
        ScriptedChatClient {
            replies: Mutex::new(replies.into()),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn push(&self, reply: Result<String, LlmError>) {
        self.replies.lock().expect("poisoned").push_back(reply);
    }

    pub fn requests(&self) -> Vec<Vec<ChatMessage>> {
        self.requests.lock().expect("poisoned").clone()
    }
}

impl ChatClient for ScriptedChatClient {
    fn complete(&self, messages: &[ChatMessage], _temperature: f64) -> Result<String, LlmError> {
        self.requests.lock().expect("poisoned").push(messages.to_vec());
        self.replies
            .lock()
            .expect("poisoned")
            .pop_front()
            .unwrap_or_else(|| Err(LlmError::Transport("script exhausted".into())))
    }
}

/// First balanced top-level `{...}` in `reply` that parses as a JSON object.
/// Braces inside JSON strings are ignored.
pub fn extract_json_object(reply: &str) -> Option<&str> {
    let bytes = reply.as_bytes();
    let mut start = 0;
    while let Some(off) = reply[start..].find('{') {
        let open = start + off;
        if let Some(close) = matching_brace(bytes, open) {
            let candidate = &reply[open..=close];
            if matches!(
                serde_json::from_str::<serde_json::Value>(candidate),
                Ok(serde_json::Value::Object(_))
            ) {
                return Some(candidate);
            }
        }
        start = open + 1;
    }
    None
}

fn matching_brace(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}
