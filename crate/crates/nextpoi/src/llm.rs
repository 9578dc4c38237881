//! Chat-completion dispatch: a live OpenAI-compatible backend with retries,
//! a content-addressed response cache, and deterministic in-process mocks.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::prompting::{self, PromptBundle};

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const MAX_ATTEMPTS: u32 = 5;
pub const BACKOFF_BASE: Duration = Duration::from_secs(1);

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("authentication rejected ({status}): {body}")]
    Auth { status: u16, body: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("server error after {attempts} attempts: {last}")]
    ServerError { attempts: u32, last: String },
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("unexpected status {status}: {body}")]
    UnexpectedStatus { status: u16, body: String },
    #[error("malformed completion payload: {0}")]
    MalformedPayload(String),
    #[error("fixture replay exhausted")]
    FixtureExhausted,
    #[error("cache I/O failure at {path}: {reason}")]
    CacheIo { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// A chat-completion request. Field order matters: the cache key hashes the
/// canonical JSON serialization of this struct.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        let request = ChatRequest {
            model: model.into(),
            messages,
            temperature: 0.0,
            max_output_tokens: 1024,
        };
        request.check();
        request
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self.check();
        self
    }

    pub fn from_prompt(bundle: &PromptBundle, model: &str, temperature: f64) -> Self {
        ChatRequest::new(
            model,
            vec![
                ChatMessage { role: "system".into(), content: bundle.system_text.clone() },
                ChatMessage { role: "user".into(), content: bundle.user_text.clone() },
            ],
        )
        .with_temperature(temperature)
    }

    fn check(&self) {
        assert!(!self.messages.is_empty(), "chat request needs at least one message");
        assert!((0.0..=2.0).contains(&self.temperature), "temperature must lie in [0, 2]");
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency_ms: u64,
    pub from_cache: bool,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

/// 256-bit digest identifying a request for caching.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(String);

impl CacheKey {
    pub fn hex(&self) -> &str {
        &self.0
    }
}

pub fn cache_key(request: &ChatRequest) -> CacheKey {
    let canonical = serde_json::to_vec(request).expect("request serializes");
    let digest = Sha256::digest(&canonical);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        hex.push_str(&format!("{byte:02x}"));
    }
    CacheKey(hex)
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    request: ChatRequest,
    text: String,
    prompt_tokens: u64,
    completion_tokens: u64,
    created_unix: u64,
}

fn cache_path(cache_dir: &Path, key: &CacheKey) -> PathBuf {
    cache_dir.join(&key.hex()[..2]).join(format!("{}.json", key.hex()))
}

/// Serves the response from the content-addressed cache when present,
/// otherwise calls the backend and stores the result with an atomic
/// write-temp-then-rename. Concurrent identical misses may each call the
/// backend but leave exactly one valid entry behind.
pub fn cached_complete(
    backend: &dyn ChatBackend,
    cache_dir: &Path,
    request: &ChatRequest,
) -> Result<ChatResponse, LlmError> {
    let key = cache_key(request);
    let path = cache_path(cache_dir, &key);

    if let Ok(bytes) = fs::read(&path) {
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) => {
                return Ok(ChatResponse {
                    text: entry.text,
                    prompt_tokens: entry.prompt_tokens,
                    completion_tokens: entry.completion_tokens,
                    latency_ms: 0,
                    from_cache: true,
                })
            }
            Err(err) => log::warn!("ignoring corrupt cache entry {}: {err}", path.display()),
        }
    }

    let response = backend.complete(request)?;
    let entry = CacheEntry {
        request: request.clone(),
        text: response.text.clone(),
        prompt_tokens: response.prompt_tokens,
        completion_tokens: response.completion_tokens,
        created_unix: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    write_atomically(&path, &entry)?;
    Ok(response)
}

fn write_atomically(path: &Path, entry: &CacheEntry) -> Result<(), LlmError> {
    static TMP_COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(0);
    let cache_io = |reason: String| LlmError::CacheIo { path: path.to_path_buf(), reason };
    let dir = path.parent().expect("cache path has a parent");
    fs::create_dir_all(dir).map_err(|e| cache_io(e.to_string()))?;
    let tmp = dir.join(format!(
        ".tmp-{}-{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed)
    ));
    let payload = serde_json::to_vec_pretty(entry).expect("entry serializes");
    let mut file = fs::File::create(&tmp).map_err(|e| cache_io(e.to_string()))?;
    file.write_all(&payload).map_err(|e| cache_io(e.to_string()))?;
    file.sync_all().ok();
    fs::rename(&tmp, path).map_err(|e| cache_io(e.to_string()))?;
    Ok(())
}

/// Cache inventory for the `cache stats` subcommand.
#[derive(Debug, Default, Serialize, PartialEq)]
pub struct CacheStats {
    pub entries: usize,
    pub total_bytes: u64,
}

pub fn cache_stats(cache_dir: &Path) -> std::io::Result<CacheStats> {
    let mut stats = CacheStats::default();
    if !cache_dir.exists() {
        return Ok(stats);
    }
    for shard in fs::read_dir(cache_dir)? {
        let shard = shard?.path();
        if !shard.is_dir() {
            continue;
        }
        for entry in fs::read_dir(&shard)? {
            let entry = entry?;
            let path = entry.path();
            if path.extension().is_some_and(|e| e == "json") {
                stats.entries += 1;
                stats.total_bytes += entry.metadata()?.len();
            }
        }
    }
    Ok(stats)
}

// --- live backend ---

#[derive(Debug)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

#[derive(Debug)]
pub struct TransportFailure {
    pub timed_out: bool,
    pub message: String,
}

/// One HTTP POST. Injectable so retry behavior is testable without a network.
pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportFailure>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Self {
        ReqwestTransport { client: reqwest::blocking::Client::new() }
    }
}

impl Default for ReqwestTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: &str,
        body: &serde_json::Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportFailure> {
        let response = self
            .client
            .post(url)
            .bearer_auth(bearer)
            .json(body)
            .timeout(timeout)
            .send()
            .map_err(|e| TransportFailure { timed_out: e.is_timeout(), message: e.to_string() })?;
        let status = response.status().as_u16();
        let body = response
            .text()
            .map_err(|e| TransportFailure { timed_out: e.is_timeout(), message: e.to_string() })?;
        Ok(HttpReply { status, body })
    }
}

type Sleeper = Box<dyn Fn(Duration) + Send + Sync>;

/// OpenAI-compatible chat-completions client. Rate limits and server errors
/// are retried with exponential backoff and jitter; auth failures are not.
pub struct HttpBackend {
    base_url: String,
    api_key: String,
    transport: Box<dyn Transport>,
    timeout: Duration,
    max_attempts: u32,
    backoff_base: Duration,
    sleeper: Sleeper,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self::with_transport(base_url, api_key, Box::new(ReqwestTransport::new()))
    }

    pub fn with_transport(
        base_url: impl Into<String>,
        api_key: impl Into<String>,
        transport: Box<dyn Transport>,
    ) -> Self {
        HttpBackend {
            base_url: base_url.into(),
            api_key: api_key.into(),
            transport,
            timeout: DEFAULT_TIMEOUT,
            max_attempts: MAX_ATTEMPTS,
            backoff_base: BACKOFF_BASE,
            sleeper: Box::new(std::thread::sleep),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn with_retry(mut self, max_attempts: u32, backoff_base: Duration) -> Self {
        self.max_attempts = max_attempts.max(1);
        self.backoff_base = backoff_base;
        self
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url.trim_end_matches('/'))
    }

    /// Backoff before retry `attempt` (1-based): base * 2^(attempt-1), halved
    /// at minimum by uniform jitter.
    fn backoff(&self, attempt: u32) -> Duration {
        let exp = self.backoff_base.as_secs_f64() * f64::powi(2.0, attempt as i32 - 1);
        let jitter = rand::thread_rng().gen_range(0.5..1.0);
        Duration::from_secs_f64(exp * jitter)
    }
}

#[derive(Debug, Deserialize)]
struct CompletionPayload {
    choices: Vec<CompletionChoice>,
    #[serde(default)]
    usage: Option<CompletionUsage>,
}

#[derive(Debug, Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Debug, Deserialize)]
struct CompletionMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
struct CompletionUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let body = json!({
            "model": request.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        });
        let url = self.endpoint();
        let started = Instant::now();
        let mut last_server_error = String::new();

        for attempt in 1..=self.max_attempts {
            let reply = match self.transport.post_json(&url, &self.api_key, &body, self.timeout) {
                Ok(reply) => reply,
                Err(failure) if failure.timed_out => return Err(LlmError::Timeout(self.timeout)),
                Err(failure) => return Err(LlmError::Transport(failure.message)),
            };

            match reply.status {
                200 => {
                    let payload: CompletionPayload = serde_json::from_str(&reply.body)
                        .map_err(|e| LlmError::MalformedPayload(e.to_string()))?;
                    let text = payload
                        .choices
                        .first()
                        .and_then(|c| c.message.content.clone())
                        .ok_or_else(|| LlmError::MalformedPayload("no choices[0].message.content".into()))?;
                    let usage = payload.usage.unwrap_or_default();
                    return Ok(ChatResponse {
                        text,
                        prompt_tokens: usage.prompt_tokens,
                        completion_tokens: usage.completion_tokens,
                        latency_ms: started.elapsed().as_millis() as u64,
                        from_cache: false,
                    });
                }
                401 | 403 => return Err(LlmError::Auth { status: reply.status, body: reply.body }),
                429 => {
                    if attempt == self.max_attempts {
                        return Err(LlmError::RateLimited { attempts: attempt });
                    }
                }
                500..=599 => {
                    last_server_error = format!("{}: {}", reply.status, reply.body);
                    if attempt == self.max_attempts {
                        return Err(LlmError::ServerError { attempts: attempt, last: last_server_error });
                    }
                }
                status => return Err(LlmError::UnexpectedStatus { status, body: reply.body }),
            }
            (self.sleeper)(self.backoff(attempt));
        }
        // max_attempts >= 1, so the loop always returns.
        Err(LlmError::ServerError { attempts: self.max_attempts, last: last_server_error })
    }
}

// --- mock backends ---

/// Deterministic in-process policies standing in for a live model.
pub enum MockPolicy {
    /// Rank candidates parsed from the prompt by their printed distance.
    NearestK,
    /// Rank candidates by a popularity sidecar (train visit counts).
    PopularK(HashMap<String, u64>),
    /// Replay scripted response texts, one per call, in order.
    FixtureReplay(Vec<String>),
    /// Return prose with no JSON object in it.
    Garbage,
}

pub struct MockBackend {
    policy: MockPolicy,
    replay_cursor: Mutex<usize>,
    top_k: usize,
}

/// Builds a mock backend for the given policy.
pub fn mock_backend(policy: MockPolicy) -> MockBackend {
    MockBackend { policy, replay_cursor: Mutex::new(0), top_k: 10 }
}

impl MockBackend {
    /// Loads a fixture-replay mock from a JSONL file of JSON-encoded strings.
    pub fn fixture_from_path(path: &Path) -> std::io::Result<MockBackend> {
        let raw = fs::read_to_string(path)?;
        let mut texts = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let text: String = serde_json::from_str(line).map_err(|e| {
                std::io::Error::new(std::io::ErrorKind::InvalidData, format!("fixture line {}: {e}", i + 1))
            })?;
            texts.push(text);
        }
        Ok(mock_backend(MockPolicy::FixtureReplay(texts)))
    }

    fn estimate_tokens(text: &str) -> u64 {
        (text.chars().count() / 4) as u64
    }

    fn ranked_response(&self, request: &ChatRequest, by_popularity: Option<&HashMap<String, u64>>) -> String {
        let user_text = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == "user")
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let mut candidates = prompting::extract_candidates(user_text);
        match by_popularity {
            None => {
                // Stable by printed distance: candidates whose distances
                // round identically keep their prompt order.
                candidates.sort_by(|a, b| {
                    a.distance_km
                        .unwrap_or(f64::INFINITY)
                        .total_cmp(&b.distance_km.unwrap_or(f64::INFINITY))
                });
            }
            Some(popularity) => {
                candidates.sort_by(|a, b| {
                    let pa = popularity.get(&a.poi_id).copied().unwrap_or(0);
                    let pb = popularity.get(&b.poi_id).copied().unwrap_or(0);
                    pb.cmp(&pa).then_with(|| a.poi_id.cmp(&b.poi_id))
                });
            }
        }
        let ids: Vec<&str> = candidates.iter().take(self.top_k).map(|c| c.poi_id.as_str()).collect();
        let reason = match by_popularity {
            None => "Ranked the candidates by their listed distance from the current position.",
            Some(_) => "Ranked the candidates by how often they are visited overall.",
        };
        json!({ "recommendation": ids, "reason": reason }).to_string()
    }
}

impl ChatBackend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let text = match &self.policy {
            MockPolicy::NearestK => self.ranked_response(request, None),
            MockPolicy::PopularK(popularity) => self.ranked_response(request, Some(popularity)),
            MockPolicy::FixtureReplay(texts) => {
                let mut cursor = self.replay_cursor.lock().expect("cursor lock");
                let text = texts.get(*cursor).cloned().ok_or(LlmError::FixtureExhausted)?;
                *cursor += 1;
                text
            }
            MockPolicy::Garbage => {
                "Honestly, just wander around and see where the day takes you. No list needed.".to_string()
            }
        };
        let prompt_chars: usize = request.messages.iter().map(|m| m.content.chars().count()).sum();
        Ok(ChatResponse {
            prompt_tokens: (prompt_chars / 4) as u64,
            completion_tokens: Self::estimate_tokens(&text),
            text,
            latency_ms: 0,
            from_cache: false,
        })
    }
}

/// A transport that fails the test if any live call is attempted. Used to
/// prove mock-backed runs never touch the network.
pub struct PanickingTransport;

impl Transport for PanickingTransport {
    fn post_json(
        &self,
        _url: &str,
        _bearer: &str,
        _body: &serde_json::Value,
        _timeout: Duration,
    ) -> Result<HttpReply, TransportFailure> {
        panic!("live transport used in a mock-only context");
    }
}
