//! Chat completion gateway: request types, retry with backoff, bounded
//! concurrency and throughput probing over a pluggable backend.

mod audit;
mod http;
mod mock;
mod replay;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use halludet_core::retry::RetryPolicy;
use halludet_core::throughput::{RunSample, ThroughputReport};
use halludet_core::PromptText;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use audit::{AuditEntry, AuditLog};
pub use http::{HttpBackend, HttpConfig};
pub use mock::{ManualClock, Scripted, ScriptedBackend};
pub use replay::{RecordingBackend, ReplayBackend, ReplayEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Distinguishes deliberate re-asks of an otherwise identical request.
    /// Part of the replay key, never sent on the wire.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub variant: u32,
}

fn is_zero(v: &u32) -> bool {
    *v == 0
}

impl ChatRequest {
    pub fn from_prompt(model: &str, prompt: &PromptText, temperature: f64, max_output_tokens: u32) -> Self {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &prompt.system {
            messages.push(ChatMessage { role: Role::System, content: system.clone() });
        }
        messages.push(ChatMessage { role: Role::User, content: prompt.user.clone() });
        Self { model: model.to_string(), messages, temperature, max_output_tokens, variant: 0 }
    }

    pub fn with_variant(mut self, variant: u32) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |msg: &str| Err(GatewayError::InvalidRequest(msg.to_string()));
        if self.model.trim().is_empty() {
            return bad("model is empty");
        }
        if self.messages.is_empty() {
            return bad("no messages");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return bad("temperature outside [0, 2]");
        }
        if self.max_output_tokens == 0 {
            return bad("max_output_tokens must be positive");
        }
        Ok(())
    }

    /// Hex sha256 over the canonical request (model, messages,
    /// temperature, token limit, variant).
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::json!({
            "model": self.model,
            "messages": self.messages,
            "temperature": self.temperature,
            "max_output_tokens": self.max_output_tokens,
            "variant": self.variant,
        });
        let mut h = Sha256::new();
        h.update(canonical.to_string().as_bytes());
        hex::encode(h.finalize())
    }

    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

/// What a backend returns for one successful call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendReply {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl BackendReply {
    pub fn text(content: impl Into<String>) -> Self {
        let content = content.into();
        let completion_tokens = content.split_whitespace().count() as u64;
        Self { content, prompt_tokens: 0, completion_tokens }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatResponse {
    pub content: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency: Duration,
    /// Transport attempts consumed, including the successful one.
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("server error {status}")]
    Server { status: u16, body: String },
    #[error("connection failed: {0}")]
    Connection(String),
    #[error("authentication rejected ({status})")]
    Auth { status: u16 },
    #[error("bad request {status}: {body}")]
    BadRequest { status: u16, body: String },
    #[error("undecodable response: {0}")]
    Decode(String),
    #[error("no recorded reply for request {key}")]
    ReplayMiss { key: String },
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            TransportError::Timeout
                | TransportError::RateLimited { .. }
                | TransportError::Server { .. }
                | TransportError::Connection(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gave up after {attempts} attempts: {last}")]
    TransportExhausted { attempts: u32, last: TransportError },
    #[error("{0}")]
    NonRetryable(TransportError),
}

pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, TransportError>;

    /// Stable description of where requests go, for run manifests.
    fn identity(&self) -> String;
}

impl<B: ChatBackend + ?Sized> ChatBackend for Arc<B> {
    fn send(&self, request: &ChatRequest) -> Result<BackendReply, TransportError> {
        (**self).send(request)
    }

    fn identity(&self) -> String {
        (**self).identity()
    }
}

pub trait Clock: Send + Sync {
    /// Monotonic time since an arbitrary origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    policy: RetryPolicy,
    clock: Arc<dyn Clock>,
    jitter: Mutex<ChaCha8Rng>,
    audit: Option<Arc<AuditLog>>,
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            policy: RetryPolicy::default(),
            clock: Arc::new(SystemClock::new()),
            jitter: Mutex::new(ChaCha8Rng::seed_from_u64(0)),
            audit: None,
        }
    }

    pub fn with_policy(mut self, policy: RetryPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_jitter_seed(self, seed: u64) -> Self {
        *self.jitter.lock().unwrap() = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn with_audit(mut self, audit: Arc<AuditLog>) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    pub fn backend_identity(&self) -> String {
        self.backend.identity()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let max_attempts = self.policy.max_attempts.max(1);
        let hash = request.fingerprint();
        let mut last = None;
        for attempt in 1..=max_attempts {
            let start = self.clock.now();
            let result = self.backend.send(request);
            let latency = self.clock.now().saturating_sub(start);
            if let Some(audit) = &self.audit {
                audit.record(AuditEntry::new(&hash, attempt, latency, &result));
            }
            match result {
                Ok(reply) => {
                    return Ok(ChatResponse {
                        content: reply.content,
                        prompt_tokens: reply.prompt_tokens,
                        completion_tokens: reply.completion_tokens,
                        latency,
                        attempts: attempt,
                    })
                }
                Err(e) if !e.is_retryable() => return Err(GatewayError::NonRetryable(e)),
                Err(e) => {
                    if attempt < max_attempts {
                        let mut wait = self.policy.delay(attempt, &mut *self.jitter.lock().unwrap());
                        if let TransportError::RateLimited { retry_after: Some(after) } = &e {
                            wait = wait.max(*after);
                        }
                        self.clock.sleep(wait);
                    }
                    last = Some(e);
                }
            }
        }
        Err(GatewayError::TransportExhausted { attempts: max_attempts, last: last.expect("at least one attempt") })
    }

    /// Runs `requests` with at most `max_in_flight` outstanding calls.
    /// Result `i` always belongs to request `i`. A `max_in_flight` of zero
    /// is treated as one.
    pub fn complete_many(
        &self,
        requests: &[ChatRequest],
        max_in_flight: usize,
    ) -> Vec<Result<ChatResponse, GatewayError>> {
        let workers = max_in_flight.max(1).min(requests.len());
        if workers <= 1 {
            return requests.iter().map(|r| self.complete(r)).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<ChatResponse, GatewayError>>>> =
            requests.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= requests.len() {
                        break;
                    }
                    let result = self.complete(&requests[i]);
                    *slots[i].lock().unwrap() = Some(result);
                });
            }
        });
        slots.into_iter().map(|s| s.into_inner().unwrap().expect("every slot filled")).collect()
    }

    /// Sends `runs` requests whose prompt is `input_length` whitespace
    /// tokens and reports completion tokens per second of generation time.
    /// Failed runs are counted and mark the report partial.
    pub fn throughput_probe(
        &self,
        model: &str,
        input_length: usize,
        runs: u32,
        max_output_tokens: u32,
    ) -> Result<ThroughputReport, GatewayError> {
        if runs == 0 {
            return Err(GatewayError::InvalidRequest("runs must be at least 1".into()));
        }
        let prompt = PromptText { system: None, user: probe_prompt(input_length) };
        let mut samples = Vec::new();
        let mut failures = 0;
        for run in 0..runs {
            let request = ChatRequest::from_prompt(model, &prompt, 0.0, max_output_tokens).with_variant(run);
            match self.complete(&request) {
                Ok(resp) => samples.push(RunSample {
                    completion_tokens: resp.completion_tokens,
                    seconds: resp.latency.as_secs_f64(),
                }),
                Err(GatewayError::InvalidRequest(msg)) => return Err(GatewayError::InvalidRequest(msg)),
                Err(_) => failures += 1,
            }
        }
        Ok(ThroughputReport::from_samples(input_length as u64, samples, failures))
    }
}

const PROBE_WORDS: [&str; 8] = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"];

/// A prompt of exactly `len` whitespace-separated words.
pub fn probe_prompt(len: usize) -> String {
    (0..len).map(|i| PROBE_WORDS[i % PROBE_WORDS.len()]).collect::<Vec<_>>().join(" ")
}
