//! Chat-completion clients: an OpenAI-compatible HTTP client, a
//! deterministic stub for tests and demos, and a content-addressed response
//! cache backed by the datastore.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Semaphore;

use crate::canonical::digest_of;
use crate::datastore::Store;
use crate::text::{content_terms, Stopwords};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("rate limited after {0} attempts")]
    RateLimited(u32),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage { role: "system".into(), content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".into(), content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: "assistant".into(), content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
    pub seed: Option<u64>,
    /// Ask the endpoint for a JSON object response.
    pub json_response: bool,
}

#[async_trait]
pub trait LanguageModel: Send + Sync {
    fn model_id(&self) -> &str;

    async fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint, with a
/// shared in-flight cap and exponential backoff on 429 and 5xx responses.
pub struct OpenAiChat {
    model: String,
    base_url: String,
    api_key: Option<String>,
    client: reqwest::Client,
    limiter: Arc<Semaphore>,
    max_retries: u32,
    base_backoff: Duration,
}

impl OpenAiChat {
    pub fn new(model: impl Into<String>, base_url: impl Into<String>, api_key: Option<String>) -> Self {
        OpenAiChat {
            model: model.into(),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
            client: reqwest::Client::new(),
            limiter: Arc::new(Semaphore::new(4)),
            max_retries: 5,
            base_backoff: Duration::from_millis(500),
        }
    }

    pub fn with_limiter(mut self, limiter: Arc<Semaphore>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn with_retries(mut self, max_retries: u32, base_backoff: Duration) -> Self {
        self.max_retries = max_retries;
        self.base_backoff = base_backoff;
        self
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    response_format: Option<serde_json::Value>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[async_trait]
impl LanguageModel for OpenAiChat {
    fn model_id(&self) -> &str {
        &self.model
    }

    async fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let _permit = self.limiter.acquire().await.map_err(|e| LlmError::Transport(e.to_string()))?;
        let body = WireRequest {
            model: &self.model,
            messages: &request.messages,
            temperature: request.temperature,
            seed: request.seed,
            response_format: request
                .json_response
                .then(|| serde_json::json!({"type": "json_object"})),
        };
        let url = format!("{}/chat/completions", self.base_url);
        let mut attempt = 0;
        loop {
            let mut req = self.client.post(&url).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let retryable = match req.send().await {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        let parsed: WireResponse = resp
                            .json()
                            .await
                            .map_err(|e| LlmError::Malformed(e.to_string()))?;
                        return parsed
                            .choices
                            .into_iter()
                            .next()
                            .and_then(|c| c.message.content)
                            .ok_or_else(|| LlmError::Malformed("no choices in response".into()));
                    }
                    let code = status.as_u16();
                    if code == 429 || status.is_server_error() {
                        true
                    } else {
                        let body = resp.text().await.unwrap_or_default();
                        return Err(LlmError::Status { status: code, body });
                    }
                }
                Err(e) if e.is_timeout() || e.is_connect() => true,
                Err(e) => return Err(LlmError::Transport(e.to_string())),
            };
            if retryable {
                attempt += 1;
                if attempt > self.max_retries {
                    return Err(LlmError::RateLimited(attempt));
                }
                tokio::time::sleep(self.base_backoff * 2u32.saturating_pow(attempt - 1)).await;
            }
        }
    }
}

/// Wraps a model with a persistent response cache keyed by a digest of the
/// model ID and the full request.
pub struct CachedLlm {
    inner: Arc<dyn LanguageModel>,
    store: Store,
}

impl CachedLlm {
    pub fn new(inner: Arc<dyn LanguageModel>, store: Store) -> Self {
        CachedLlm { inner, store }
    }

    pub fn request_digest(model_id: &str, request: &ChatRequest) -> String {
        digest_of(&(model_id, request)).expect("chat request serializes")
    }
}

#[async_trait]
impl LanguageModel for CachedLlm {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    async fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        let digest = Self::request_digest(self.inner.model_id(), request);
        if let Some(hit) = self.store.llm_cache_get(&digest).map_err(|e| LlmError::Cache(e.to_string()))? {
            return Ok(hit);
        }
        let out = self.inner.complete(request).await?;
        self.store.llm_cache_put(&digest, &out).map_err(|e| LlmError::Cache(e.to_string()))?;
        Ok(out)
    }
}

/// Marker the themes prompts use to request structured output; the stub
/// keys its behaviour on it.
pub const STRUCTURED_OUTPUT_MARKER: &str = "\"cited_excerpts\"";

enum StubMode {
    Heuristic,
    Canned(Mutex<std::collections::VecDeque<String>>),
    Fail,
}

/// Deterministic stand-in for a chat model.
///
/// In heuristic mode, theme/suggestion prompts (those containing
/// [`STRUCTURED_OUTPUT_MARKER`]) get up to three items built around the most
/// frequent content terms of the numbered comments, each citing verbatim
/// excerpts; any other prompt gets a short label made from its most
/// frequent terms.
pub struct StubLlm {
    model_id: String,
    mode: StubMode,
    calls: AtomicUsize,
    stopwords: Stopwords,
}

pub const STUB_LLM_ID: &str = "stub-llm-v1";

impl StubLlm {
    pub fn heuristic() -> Self {
        Self::with_mode(StubMode::Heuristic)
    }

    /// Replies with `responses` in order; falls back to heuristic mode once
    /// they run out.
    pub fn canned(responses: Vec<String>) -> Self {
        Self::with_mode(StubMode::Canned(Mutex::new(responses.into())))
    }

    /// Every call fails with a transport error.
    pub fn failing() -> Self {
        Self::with_mode(StubMode::Fail)
    }

    fn with_mode(mode: StubMode) -> Self {
        StubLlm {
            model_id: STUB_LLM_ID.into(),
            mode,
            calls: AtomicUsize::new(0),
            stopwords: Stopwords::english(),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn top_terms(&self, texts: &[&str], n: usize) -> Vec<String> {
        let mut freq: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for w in content_terms(t, &self.stopwords) {
                *freq.entry(w).or_default() += 1;
            }
        }
        let mut v: Vec<_> = freq.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.into_iter().take(n).map(|(w, _)| w).collect()
    }

    fn heuristic_reply(&self, prompt: &str) -> String {
        let comments = numbered_lines(prompt);
        if prompt.contains(STRUCTURED_OUTPUT_MARKER) {
            let items: Vec<serde_json::Value> = self
                .top_terms(&comments, 3)
                .into_iter()
                .map(|term| {
                    let cited: Vec<String> = comments
                        .iter()
                        .filter(|c| content_terms(c, &self.stopwords).any(|w| w == term))
                        .take(3)
                        .map(|c| excerpt_around(c, &term, 80))
                        .collect();
                    serde_json::json!({
                        "title": format!("Comments about {term}"),
                        "description": format!("Several commenters bring up {term}."),
                        "cited_excerpts": cited,
                    })
                })
                .collect();
            serde_json::json!({ "items": items }).to_string()
        } else {
            let terms = self.top_terms(&comments, 3);
            if terms.is_empty() {
                "Miscellaneous".into()
            } else {
                terms.join(" / ")
            }
        }
    }
}

/// Texts of prompt lines of the form `[n] text`.
fn numbered_lines(prompt: &str) -> Vec<&str> {
    prompt
        .lines()
        .filter_map(|l| {
            let l = l.trim_start();
            let rest = l.strip_prefix('[')?;
            let close = rest.find(']')?;
            rest[..close].parse::<usize>().ok()?;
            Some(rest[close + 1..].trim())
        })
        .collect()
}

/// Up to `max_chars` characters of `text` starting at the word containing
/// `term` (or at the start if not found).
fn excerpt_around(text: &str, term: &str, max_chars: usize) -> String {
    let lower = text.to_lowercase();
    let start = if lower.len() == text.len() {
        lower.find(term).map(|i| text[..i].rfind(' ').map_or(0, |s| s + 1)).unwrap_or(0)
    } else {
        0
    };
    crate::text::head_chars(&text[start..], max_chars).trim().to_string()
}

#[async_trait]
impl LanguageModel for StubLlm {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let prompt: String =
            request.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n");
        match &self.mode {
            StubMode::Fail => Err(LlmError::Transport("stub configured to fail".into())),
            StubMode::Canned(queue) => {
                let next = queue.lock().expect("stub queue").pop_front();
                Ok(next.unwrap_or_else(|| self.heuristic_reply(&prompt)))
            }
            StubMode::Heuristic => Ok(self.heuristic_reply(&prompt)),
        }
    }
}
