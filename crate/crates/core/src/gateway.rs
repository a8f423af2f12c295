//! Text-completion gateway.
//!
//! Three providers share one call surface:
//! - `Http`: an OpenAI-compatible `/completions` endpoint;
//! - `Fixture`: canned responses keyed by the SHA-256 of the prompt;
//! - `EchoTopMatch`: answers with the target of the last in-context example,
//!   which makes the closed adaptation loop testable without a model.
//!
//! Batches are split into chunks of `batch_size`; inside a chunk at most
//! `max_parallel` requests are in flight and results keep input order.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use futures::stream::{self, StreamExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("batch has no prompts")]
    EmptyBatch,
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("api key variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("authentication rejected (status {status})")]
    Auth { status: u16 },
    #[error("request rejected with status {status}: {message}")]
    Rejected { status: u16, message: String },
    #[error("gave up after {attempts} attempts (last status {last_status:?}): {message}")]
    Exhausted { attempts: u32, last_status: Option<u16>, message: String },
    #[error("malformed provider response: {0}")]
    Decode(String),
    #[error("no fixture for prompt {hash}")]
    FixtureMiss { hash: String },
    #[error("fixture load failed: {0}")]
    FixtureLoad(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoding {
    #[default]
    Sampling,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub model: String,
    pub top_p: f64,
    pub temperature: f64,
    #[serde(default)]
    pub stop: Vec<String>,
    /// Fixed output-token limit. When unset, callers derive one per segment.
    #[serde(default)]
    pub max_tokens: Option<u32>,
    #[serde(default)]
    pub decoding: Decoding,
    pub batch_size: usize,
    pub max_parallel: usize,
}

pub const DEFAULT_MODEL: &str = "text-davinci-003";
pub const DEFAULT_BATCH_SIZE: usize = 20;
/// Upper bound on new tokens for greedy-decoding providers.
pub const MAX_NEW_TOKENS_CAP: usize = 250;

impl Default for GenerationConfig {
    fn default() -> Self {
        Self::translation()
    }
}

impl GenerationConfig {
    /// Sampling settings for translation prompts.
    pub fn translation() -> Self {
        Self {
            model: DEFAULT_MODEL.to_string(),
            top_p: 1.0,
            temperature: 0.3,
            stop: vec!["\n".to_string()],
            max_tokens: None,
            decoding: Decoding::Sampling,
            batch_size: DEFAULT_BATCH_SIZE,
            max_parallel: 4,
        }
    }

    /// Deterministic settings for term extraction. No stop sequence: the
    /// answer spans several lines.
    pub fn term_extraction() -> Self {
        Self { temperature: 0.0, stop: Vec::new(), ..Self::translation() }
    }

    /// Greedy decoding, for providers where sampling hurts translation.
    pub fn greedy(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            decoding: Decoding::Greedy,
            stop: Vec::new(),
            ..Self::translation()
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |m: &str| Err(GatewayError::InvalidConfig(m.to_string()));
        if !(0.0..=1.0).contains(&self.top_p) {
            return bad("top_p must be in [0, 1]");
        }
        if !(self.temperature >= 0.0) {
            return bad("temperature must be >= 0");
        }
        if self.batch_size < 1 {
            return bad("batch_size must be >= 1");
        }
        if self.max_parallel < 1 {
            return bad("max_parallel must be >= 1");
        }
        if self.max_tokens == Some(0) {
            return bad("max_tokens must be positive");
        }
        Ok(())
    }

    /// (temperature, top_p) as sent on the wire. Greedy maps to temperature 0.
    pub fn wire_sampling(&self) -> (f64, f64) {
        match self.decoding {
            Decoding::Greedy => (0.0, 1.0),
            Decoding::Sampling => (self.temperature, self.top_p),
        }
    }
}

/// New-token budget for greedy providers: twice the source word count, capped.
pub fn dynamic_max_new_tokens(source: &str, cap: usize) -> usize {
    (2 * source.split_whitespace().count()).min(cap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Other,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    pub request_id: String,
    pub attempts: u32,
}

/// Hex SHA-256 of the prompt bytes; the key used by fixtures.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(rename = "match")]
    pub hash: String,
    pub response: String,
    #[serde(default = "ok_status")]
    pub status: u16,
}

fn ok_status() -> u16 {
    200
}

/// Canned responses keyed by prompt hash, loaded from JSONL lines of
/// `{"match": "<sha256>", "response": "...", "status": 200}`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureTable {
    entries: HashMap<String, FixtureEntry>,
    /// Served for prompts with no entry. Without it a miss is an error.
    pub fallback: Option<String>,
}

impl FixtureTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fallback(mut self, text: impl Into<String>) -> Self {
        self.fallback = Some(text.into());
        self
    }

    pub fn insert_prompt(&mut self, prompt: &str, response: impl Into<String>) {
        self.insert(FixtureEntry { hash: prompt_hash(prompt), response: response.into(), status: 200 });
    }

    pub fn insert(&mut self, entry: FixtureEntry) {
        self.entries.insert(entry.hash.clone(), entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn lookup(&self, prompt: &str) -> Option<FixtureEntry> {
        let hash = prompt_hash(prompt);
        match self.entries.get(&hash) {
            Some(e) => Some(e.clone()),
            None => self.fallback.as_ref().map(|f| FixtureEntry { hash, response: f.clone(), status: 200 }),
        }
    }

    pub fn from_jsonl(text: &str) -> Result<Self, GatewayError> {
        let mut table = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: FixtureEntry = serde_json::from_str(line)
                .map_err(|e| GatewayError::FixtureLoad(format!("line {}: {e}", i + 1)))?;
            table.insert(entry);
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path).map_err(|e| GatewayError::FixtureLoad(e.to_string()))?;
        Self::from_jsonl(&text)
    }

    pub fn to_jsonl(&self) -> String {
        let mut entries: Vec<_> = self.entries.values().collect();
        entries.sort_by(|a, b| a.hash.cmp(&b.hash));
        entries
            .into_iter()
            .map(|e| serde_json::to_string(e).expect("fixture entry serializes") + "\n")
            .collect()
    }
}

/// Target text of the last in-context example: the last `<Target>: ...` line
/// before the final `<Target>:` cue. `None` for prompts without examples.
pub fn echo_top_match(prompt: &str) -> Option<String> {
    let mut lines = prompt.split('\n').rev();
    let cue = lines.next()?.strip_suffix(':')?;
    if cue.is_empty() || cue.contains(": ") {
        return None;
    }
    let prefix = format!("{cue}: ");
    lines.find_map(|l| l.strip_prefix(&prefix).map(str::to_string))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderKind {
    HttpOpenaiCompatible {
        endpoint: String,
        /// Name of the environment variable holding the bearer token.
        #[serde(default)]
        api_key_env: Option<String>,
    },
    Fixture {
        #[serde(skip)]
        table: FixtureTable,
    },
    EchoTopMatch,
}

impl ProviderKind {
    pub fn http(endpoint: impl Into<String>, api_key_env: Option<String>) -> Self {
        Self::HttpOpenaiCompatible { endpoint: endpoint.into(), api_key_env }
    }

    pub fn fixture(table: FixtureTable) -> Self {
        Self::Fixture { table }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ProviderKind::HttpOpenaiCompatible { .. } => "http_openai_compatible",
            ProviderKind::Fixture { .. } => "fixture",
            ProviderKind::EchoTopMatch => "echo_top_match",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: f64,
    pub max_delay_ms: u64,
    pub jitter: bool,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 6,
            base_delay_ms: 1_000,
            factor: 2.0,
            max_delay_ms: 60_000,
            jitter: true,
            timeout_ms: 120_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, given that `attempt` (1-based) failed.
    pub fn backoff(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let max = Duration::from_millis(self.max_delay_ms);
        if let Some(ra) = retry_after {
            return ra.min(max);
        }
        let exp = self.base_delay_ms as f64 * self.factor.powi(attempt.saturating_sub(1) as i32);
        let mut ms = exp.min(self.max_delay_ms as f64);
        if self.jitter {
            ms *= 1.0 + rand::rng().random_range(0.0..0.2);
        }
        Duration::from_millis(ms as u64).min(max)
    }
}

#[derive(Debug, Default)]
pub struct GatewayStats {
    pub completions: AtomicU64,
    pub attempts: AtomicU64,
    pub retries: AtomicU64,
    pub chunks: AtomicU64,
    pub failures: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub completions: u64,
    pub attempts: u64,
    pub retries: u64,
    pub chunks: u64,
    pub failures: u64,
}

/// One prompt with an optional per-item output-token limit.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: Option<u32>,
}

impl From<String> for CompletionRequest {
    fn from(prompt: String) -> Self {
        Self { prompt, max_tokens: None }
    }
}

/// Chunk sizes for `n` items with the given batch size.
pub fn plan_chunks(n: usize, batch_size: usize) -> Vec<usize> {
    let batch_size = batch_size.max(1);
    (0..n).step_by(batch_size).map(|start| batch_size.min(n - start)).collect()
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    top_p: f64,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    id: Option<String>,
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    text: String,
    #[serde(default)]
    finish_reason: Option<String>,
}

/// Default output limit when neither the config nor the request sets one.
const FALLBACK_MAX_TOKENS: u32 = 256;

/// Shareable completion client. Cloning is cheap.
#[derive(Debug, Clone)]
pub struct Gateway {
    provider: Arc<ProviderKind>,
    retry: RetryPolicy,
    client: reqwest::Client,
    stats: Arc<GatewayStats>,
}

impl Gateway {
    pub fn new(provider: ProviderKind) -> Self {
        Self::with_retry(provider, RetryPolicy::default())
    }

    pub fn with_retry(provider: ProviderKind, retry: RetryPolicy) -> Self {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(retry.timeout_ms))
            .build()
            .expect("http client builds");
        Self { provider: Arc::new(provider), retry, client, stats: Arc::default() }
    }

    pub fn provider(&self) -> &ProviderKind {
        &self.provider
    }

    pub fn stats(&self) -> StatsSnapshot {
        let s = &self.stats;
        StatsSnapshot {
            completions: s.completions.load(Ordering::Relaxed),
            attempts: s.attempts.load(Ordering::Relaxed),
            retries: s.retries.load(Ordering::Relaxed),
            chunks: s.chunks.load(Ordering::Relaxed),
            failures: s.failures.load(Ordering::Relaxed),
        }
    }

    /// Checks provider configuration that does not need the network.
    pub fn preflight(&self) -> Result<(), GatewayError> {
        if let ProviderKind::HttpOpenaiCompatible { endpoint, api_key_env } = self.provider.as_ref() {
            reqwest::Url::parse(endpoint).map_err(|e| GatewayError::InvalidConfig(format!("endpoint: {e}")))?;
            if let Some(var) = api_key_env {
                std::env::var(var).map_err(|_| GatewayError::MissingApiKey(var.clone()))?;
            }
        }
        Ok(())
    }

    pub async fn complete(&self, prompt: &str, cfg: &GenerationConfig) -> Result<Completion, GatewayError> {
        cfg.validate()?;
        self.complete_one(CompletionRequest { prompt: prompt.to_string(), max_tokens: None }, cfg)
            .await
    }

    pub async fn complete_batch(
        &self,
        prompts: &[String],
        cfg: &GenerationConfig,
    ) -> Result<Vec<Result<Completion, GatewayError>>, GatewayError> {
        let requests = prompts.iter().cloned().map(CompletionRequest::from).collect();
        self.complete_requests(requests, cfg).await
    }

    /// Completes every request; slot `i` of the output belongs to request `i`.
    /// A failed slot does not affect the others.
    pub async fn complete_requests(
        &self,
        requests: Vec<CompletionRequest>,
        cfg: &GenerationConfig,
    ) -> Result<Vec<Result<Completion, GatewayError>>, GatewayError> {
        if requests.is_empty() {
            return Err(GatewayError::EmptyBatch);
        }
        cfg.validate()?;
        let mut out = Vec::with_capacity(requests.len());
        let mut pending = requests.into_iter();
        for size in plan_chunks(pending.len(), cfg.batch_size) {
            self.stats.chunks.fetch_add(1, Ordering::Relaxed);
            let chunk: Vec<_> = pending.by_ref().take(size).collect();
            let results: Vec<_> = stream::iter(chunk)
                .map(|req| self.complete_one(req, cfg))
                .buffered(cfg.max_parallel)
                .collect()
                .await;
            out.extend(results);
        }
        Ok(out)
    }

    async fn complete_one(&self, req: CompletionRequest, cfg: &GenerationConfig) -> Result<Completion, GatewayError> {
        if req.prompt.is_empty() {
            return Err(GatewayError::EmptyPrompt);
        }
        let result = match self.provider.as_ref() {
            ProviderKind::EchoTopMatch => {
                self.stats.attempts.fetch_add(1, Ordering::Relaxed);
                Ok(match echo_top_match(&req.prompt) {
                    Some(text) if !text.is_empty() => local_completion(&req.prompt, text, FinishReason::Stop),
                    _ => local_completion(&req.prompt, String::new(), FinishReason::Other),
                })
            }
            ProviderKind::Fixture { table } => {
                self.stats.attempts.fetch_add(1, Ordering::Relaxed);
                match table.lookup(&req.prompt) {
                    None => Err(GatewayError::FixtureMiss { hash: prompt_hash(&req.prompt) }),
                    Some(e) if e.status == 401 || e.status == 403 => Err(GatewayError::Auth { status: e.status }),
                    Some(e) if e.status != 200 => Err(GatewayError::Rejected {
                        status: e.status,
                        message: e.response,
                    }),
                    Some(e) => {
                        let reason = if e.response.is_empty() { FinishReason::Other } else { FinishReason::Stop };
                        Ok(local_completion(&req.prompt, e.response, reason))
                    }
                }
            }
            ProviderKind::HttpOpenaiCompatible { endpoint, api_key_env } => {
                self.complete_http(endpoint, api_key_env.as_deref(), &req, cfg).await
            }
        };
        match &result {
            Ok(_) => self.stats.completions.fetch_add(1, Ordering::Relaxed),
            Err(_) => self.stats.failures.fetch_add(1, Ordering::Relaxed),
        };
        result
    }

    async fn complete_http(
        &self,
        endpoint: &str,
        api_key_env: Option<&str>,
        req: &CompletionRequest,
        cfg: &GenerationConfig,
    ) -> Result<Completion, GatewayError> {
        let api_key = match api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| GatewayError::MissingApiKey(var.to_string()))?),
            None => None,
        };
        let (temperature, top_p) = cfg.wire_sampling();
        let body = WireRequest {
            model: &cfg.model,
            prompt: &req.prompt,
            top_p,
            temperature,
            max_tokens: req.max_tokens.or(cfg.max_tokens).unwrap_or(FALLBACK_MAX_TOKENS),
            stop: &cfg.stop,
        };
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.stats.attempts.fetch_add(1, Ordering::Relaxed);
            let mut builder = self.client.post(endpoint).json(&body);
            if let Some(key) = &api_key {
                builder = builder.bearer_auth(key);
            }
            let (status, retry_after, message) = match builder.send().await {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    if resp.status().is_success() {
                        let parsed: WireResponse =
                            resp.json().await.map_err(|e| GatewayError::Decode(e.to_string()))?;
                        let choice = parsed
                            .choices
                            .into_iter()
                            .next()
                            .ok_or_else(|| GatewayError::Decode("response has no choices".into()))?;
                        log::debug!("completion succeeded after {attempt} attempt(s)");
                        return Ok(Completion {
                            finish_reason: finish_reason(choice.finish_reason.as_deref(), &choice.text),
                            text: choice.text,
                            request_id: parsed.id.unwrap_or_else(|| prompt_hash(&req.prompt)),
                            attempts: attempt,
                        });
                    }
                    if status == 401 || status == 403 {
                        return Err(GatewayError::Auth { status });
                    }
                    let retry_after = resp
                        .headers()
                        .get(reqwest::header::RETRY_AFTER)
                        .and_then(|v| v.to_str().ok())
                        .and_then(|v| v.trim().parse::<u64>().ok())
                        .map(Duration::from_secs);
                    let text = resp.text().await.unwrap_or_default();
                    if !(status == 429 || (500..600).contains(&status)) {
                        return Err(GatewayError::Rejected { status, message: text });
                    }
                    (Some(status), retry_after, text)
                }
                Err(e) => (None, None, e.to_string()),
            };
            log::warn!("completion attempt {attempt} failed (status {status:?}): {message}");
            if attempt >= self.retry.max_attempts {
                return Err(GatewayError::Exhausted { attempts: attempt, last_status: status, message });
            }
            self.stats.retries.fetch_add(1, Ordering::Relaxed);
            tokio::time::sleep(self.retry.backoff(attempt, retry_after)).await;
        }
    }
}

fn local_completion(prompt: &str, text: String, finish_reason: FinishReason) -> Completion {
    Completion { text, finish_reason, request_id: prompt_hash(prompt), attempts: 1 }
}

fn finish_reason(raw: Option<&str>, text: &str) -> FinishReason {
    match raw {
        Some("stop") if !text.is_empty() => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        _ => FinishReason::Other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PostprocessMode {
    /// The provider already stopped at a newline; only trim.
    StopNewline,
    /// Keep what precedes the first newline, then trim.
    #[default]
    TruncateNewline,
    Verbatim,
}

/// Cleans raw model output. Leading whitespace is dropped before truncation so
/// an output that opens with a blank line still yields its first text line.
pub fn postprocess(raw: &Completion, mode: PostprocessMode) -> String {
    let text = match mode {
        PostprocessMode::Verbatim => raw.text.clone(),
        PostprocessMode::StopNewline => raw.text.trim().to_string(),
        PostprocessMode::TruncateNewline => {
            let t = raw.text.trim_start();
            t.split('\n').next().unwrap_or_default().trim().to_string()
        }
    };
    if text.is_empty() {
        log::warn!("empty translation for request {}", raw.request_id);
    }
    text
}
