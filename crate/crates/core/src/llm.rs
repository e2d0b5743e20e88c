//! Text-completion backends.
//!
//! [`complete`] wraps any [`CompletionProvider`] with bounded retries,
//! stop-sequence truncation and attempt/latency bookkeeping. Providers only
//! implement a single attempt.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::http::{excerpt, JsonClient, TransportError};
use crate::prompting::STOP_SEQUENCE;
use crate::retry::{self, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompletionParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub stop: Vec<String>,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            model: "gpt-3.5-turbo-instruct".into(),
            temperature: 0.0,
            max_tokens: 512,
            stop: vec![STOP_SEQUENCE.to_string()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRecord {
    pub prompt_hash: String,
    pub completion: String,
    pub latency_ms: u64,
    pub attempts: u32,
    /// Total time spent sleeping between retries.
    pub backoff_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("invalid completion parameters: {0}")]
    InvalidParams(String),
    #[error("rate limited (after {attempts} attempt(s))")]
    RateLimited { attempts: u32 },
    #[error("request timed out")]
    Timeout,
    #[error("backend error {status}: {body}")]
    BackendError { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("no scripted completion for prompt hash {0}")]
    ScriptMiss(String),
    #[error("mock script is empty")]
    EmptyScript,
}

impl LlmError {
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::RateLimited { .. } | LlmError::Timeout | LlmError::Transport(_) => true,
            LlmError::BackendError { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

pub trait CompletionProvider: Send + Sync {
    /// One request, no retries.
    fn complete_once(&self, prompt: &str, params: &CompletionParams) -> Result<String, LlmError>;

    fn describe(&self) -> String;
}

/// Hex SHA-256 of the prompt.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Cuts `text` at the earliest occurrence of any stop sequence.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> String {
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text.find(s.as_str()))
        .min()
        .unwrap_or(text.len());
    text[..cut].to_string()
}

pub fn complete(
    provider: &dyn CompletionProvider,
    prompt: &str,
    params: &CompletionParams,
) -> Result<CompletionRecord, LlmError> {
    complete_with(provider, prompt, params, &RetryPolicy::default())
}

pub fn complete_with(
    provider: &dyn CompletionProvider,
    prompt: &str,
    params: &CompletionParams,
    policy: &RetryPolicy,
) -> Result<CompletionRecord, LlmError> {
    if prompt.trim().is_empty() {
        return Err(LlmError::EmptyPrompt);
    }
    if params.max_tokens == 0 {
        return Err(LlmError::InvalidParams("max_tokens must be at least 1".into()));
    }
    if params.temperature.is_nan() || params.temperature < 0.0 {
        return Err(LlmError::InvalidParams("temperature must be non-negative".into()));
    }
    let hash = prompt_hash(prompt);
    let seed = u64::from_str_radix(&hash[..16], 16).unwrap_or(0);
    let started = Instant::now();
    let outcome = retry::run(policy, seed, |_| provider.complete_once(prompt, params), LlmError::is_transient);
    let text = match outcome.result {
        Ok(text) => text,
        Err(LlmError::RateLimited { .. }) => return Err(LlmError::RateLimited { attempts: outcome.attempts }),
        Err(e) => return Err(e),
    };
    Ok(CompletionRecord {
        prompt_hash: hash,
        completion: truncate_at_stop(&text, &params.stop),
        latency_ms: started.elapsed().as_millis() as u64,
        attempts: outcome.attempts,
        backoff_ms: outcome.slept.as_millis() as u64,
    })
}

/// Deterministic replay backend.
#[derive(Debug)]
pub enum MockProvider {
    /// Prompt hash to completion.
    ByHash(BTreeMap<String, String>),
    /// Completions handed out in call order.
    Ordered(Mutex<VecDeque<String>>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockScript {
    ByHash(BTreeMap<String, String>),
    Ordered(Vec<String>),
}

pub fn mock_provider(script: MockScript) -> Result<MockProvider, LlmError> {
    match script {
        MockScript::ByHash(map) if map.is_empty() => Err(LlmError::EmptyScript),
        MockScript::Ordered(list) if list.is_empty() => Err(LlmError::EmptyScript),
        MockScript::ByHash(map) => Ok(MockProvider::ByHash(map)),
        MockScript::Ordered(list) => Ok(MockProvider::Ordered(Mutex::new(list.into()))),
    }
}

impl MockProvider {
    /// Scripts completions keyed by the prompts themselves.
    pub fn from_prompts<I, P, C>(pairs: I) -> Result<Self, LlmError>
    where
        I: IntoIterator<Item = (P, C)>,
        P: AsRef<str>,
        C: Into<String>,
    {
        let map = pairs
            .into_iter()
            .map(|(p, c)| (prompt_hash(p.as_ref()), c.into()))
            .collect();
        mock_provider(MockScript::ByHash(map))
    }
}

impl CompletionProvider for MockProvider {
    fn complete_once(&self, prompt: &str, _params: &CompletionParams) -> Result<String, LlmError> {
        match self {
            MockProvider::ByHash(map) => {
                let hash = prompt_hash(prompt);
                map.get(&hash).cloned().ok_or(LlmError::ScriptMiss(hash))
            }
            MockProvider::Ordered(queue) => queue
                .lock()
                .expect("mock queue poisoned")
                .pop_front()
                .ok_or_else(|| LlmError::ScriptMiss(prompt_hash(prompt))),
        }
    }

    fn describe(&self) -> String {
        match self {
            MockProvider::ByHash(map) => format!("mock(by_hash, {} entries)", map.len()),
            MockProvider::Ordered(_) => "mock(ordered)".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpCompletionConfig {
    /// OpenAI-style `/v1/completions` endpoint.
    pub endpoint: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
    /// 0 disables the per-minute budget.
    pub requests_per_minute: u32,
    pub retry: RetryPolicy,
}

impl Default for HttpCompletionConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/completions".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 60,
            max_in_flight: 4,
            requests_per_minute: 60,
            retry: RetryPolicy::default(),
        }
    }
}

/// Counting semaphore.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cond: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self { free: Mutex::new(n.max(1)), cond: Condvar::new() }
    }

    fn enter(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate poisoned");
        while *free == 0 {
            free = self.cond.wait(free).expect("gate poisoned");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate poisoned") += 1;
        self.0.cond.notify_one();
    }
}

/// Sliding one-minute window of request start times.
#[derive(Debug)]
struct MinuteBudget {
    limit: u32,
    window: Mutex<VecDeque<Instant>>,
}

impl MinuteBudget {
    fn acquire(&self) {
        if self.limit == 0 {
            return;
        }
        loop {
            let wait = {
                let mut window = self.window.lock().expect("budget poisoned");
                let now = Instant::now();
                while window.front().is_some_and(|t| now.duration_since(*t) >= Duration::from_secs(60)) {
                    window.pop_front();
                }
                if window.len() < self.limit as usize {
                    window.push_back(now);
                    return;
                }
                Duration::from_secs(60) - now.duration_since(*window.front().expect("window is full"))
            };
            std::thread::sleep(wait);
        }
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    message: Option<ChatMessage>,
}

#[derive(Deserialize)]
struct ChatMessage {
    content: String,
}

/// Remote completion client with an in-flight cap and a per-minute budget.
#[derive(Debug)]
pub struct HttpCompletionProvider {
    config: HttpCompletionConfig,
    api_key: Option<String>,
    client: JsonClient,
    gate: Gate,
    budget: MinuteBudget,
}

impl HttpCompletionProvider {
    pub fn new(config: HttpCompletionConfig) -> Self {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self {
            client: JsonClient::new(Duration::from_secs(config.timeout_secs)),
            gate: Gate::new(config.max_in_flight),
            budget: MinuteBudget { limit: config.requests_per_minute, window: Mutex::new(VecDeque::new()) },
            api_key,
            config,
        }
    }

    pub fn config(&self) -> &HttpCompletionConfig {
        &self.config
    }
}

impl CompletionProvider for HttpCompletionProvider {
    fn complete_once(&self, prompt: &str, params: &CompletionParams) -> Result<String, LlmError> {
        let body = serde_json::to_value(CompletionRequest {
            model: &params.model,
            prompt,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            stop: &params.stop,
        })
        .map_err(|e| LlmError::Transport(e.to_string()))?;
        self.budget.acquire();
        let _slot = self.gate.enter();
        let (status, text) = self
            .client
            .post(&self.config.endpoint, self.api_key.as_deref(), &body)
            .map_err(|e| match e {
                TransportError::Timeout => LlmError::Timeout,
                TransportError::Other(m) => LlmError::Transport(m),
            })?;
        match status {
            429 => return Err(LlmError::RateLimited { attempts: 1 }),
            s if s >= 400 => return Err(LlmError::BackendError { status: s, body: excerpt(&text) }),
            _ => {}
        }
        let parsed: CompletionResponse = serde_json::from_str(&text)
            .map_err(|e| LlmError::BackendError { status, body: format!("unparseable body ({e}): {}", excerpt(&text)) })?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::BackendError { status, body: "response has no choices".into() })?;
        choice
            .text
            .or(choice.message.map(|m| m.content))
            .ok_or_else(|| LlmError::BackendError { status, body: "choice has no text".into() })
    }

    fn describe(&self) -> String {
        format!("http(endpoint={})", self.config.endpoint)
    }
}
