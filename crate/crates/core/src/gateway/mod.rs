//! Chat-completions and embeddings client.
//!
//! A [`Gateway`] wraps one [`ModelEndpoint`] and gives the rest of the crate
//! a blocking batch interface: at most `max_in_flight` requests are
//! outstanding, transport failures, 429s and 5xxs are retried with
//! exponential backoff, and every response is cached by a hash of the
//! endpoint identity and the full request.

mod cache;
mod endpoint;
mod http;
pub mod mock;
mod parse;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use cache::{hash_key, CacheError, JsonlCache};
pub use endpoint::{ModelEndpoint, RetryPolicy, MOCK_SCHEME};
pub use http::HttpBackend;
pub use mock::{mock_embedding, mock_predict, rule_based_acuity, BiasOffset, MockBackend, MockKind, MockSpec};
pub use parse::{parse_acuity, strip_answer_lines, ParseError};

use crate::dataset::{AcuityLevel, Demographics, TriageRecord};
use crate::retrieval::EmbeddingVector;

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
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Wire body of a chat-completions request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChatRequest {
    pub model: String,
    pub temperature: f64,
    pub messages: Vec<ChatMessage>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

/// The record a request is about. Sent to mock backends only; HTTP
/// backends see nothing but the messages.
#[derive(Debug, Clone, PartialEq)]
pub struct Subject {
    pub record: TriageRecord,
    pub demographics: Demographics,
}

impl Subject {
    pub fn of(record: &TriageRecord) -> Self {
        Self { record: record.clone(), demographics: record.demographics }
    }
}

#[derive(Debug, Clone)]
pub struct CompletionJob {
    pub messages: Vec<ChatMessage>,
    pub subject: Option<Subject>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("transport error: {0}")]
    Io(String),
    #[error("request timed out")]
    Timeout,
    #[error("malformed response: {0}")]
    Malformed(String),
}

impl TransportError {
    pub fn is_retryable(&self) -> bool {
        match self {
            TransportError::Status { code, .. } => *code == 429 || (500..600).contains(code),
            TransportError::Io(_) | TransportError::Timeout => true,
            TransportError::Malformed(_) => false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: TransportError },
    #[error("timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("environment variable {0} holding the API key is not set")]
    AuthMissing(String),
    #[error("request rejected with HTTP {code}: {body}")]
    Rejected { code: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error("invalid endpoint {name}: {problems}")]
    InvalidEndpoint { name: String, problems: String },
}

/// Outcome of one completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub raw_text: String,
    pub parsed: Option<AcuityLevel>,
    pub parse_error: Option<ParseError>,
    pub latency_ms: u64,
    /// Network attempts made; 0 for a cache hit.
    pub attempts: u32,
    pub cached: bool,
}

impl CompletionResult {
    fn from_text(raw_text: String, latency_ms: u64, attempts: u32, cached: bool) -> Self {
        let (parsed, parse_error) = match parse_acuity(&raw_text) {
            Ok(level) => (Some(level), None),
            Err(e) => (None, Some(e)),
        };
        Self { raw_text, parsed, parse_error, latency_ms, attempts, cached }
    }
}

/// Anything that can answer chat and embedding requests.
pub trait Backend: Send + Sync {
    fn chat(&self, request: &ChatRequest, subject: Option<&Subject>) -> Result<String, TransportError>;
    fn embed(&self, model: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError>;
    /// Whether responses depend on the subject as well as the messages.
    /// Such backends get the subject folded into the cache key.
    fn subject_sensitive(&self) -> bool {
        false
    }
}

#[derive(Debug, Default)]
struct Counters {
    requests: AtomicU64,
    cache_hits: AtomicU64,
    network_calls: AtomicU64,
    embed_texts: AtomicU64,
    embed_cache_hits: AtomicU64,
}

/// Request counters of one gateway.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GatewayStats {
    pub requests: u64,
    pub cache_hits: u64,
    /// Backend invocations, retries included.
    pub network_calls: u64,
    pub embed_texts: u64,
    pub embed_cache_hits: u64,
}

const EMBED_CHUNK: usize = 64;

pub struct Gateway {
    endpoint: ModelEndpoint,
    backend: Arc<dyn Backend>,
    completions: JsonlCache<String>,
    embeddings: JsonlCache<Vec<f64>>,
    counters: Counters,
}

impl Gateway {
    /// Builds the backend the endpoint describes, with in-memory caches.
    pub fn new(endpoint: ModelEndpoint) -> Result<Self, GatewayError> {
        let problems = endpoint.problems();
        if !problems.is_empty() {
            return Err(GatewayError::InvalidEndpoint { name: endpoint.name.clone(), problems: problems.join("; ") });
        }
        let backend: Arc<dyn Backend> = if endpoint.is_mock() {
            Arc::new(MockBackend::new(endpoint.mock.clone().unwrap_or_default()))
        } else {
            let api_key = match &endpoint.api_key_env {
                Some(var) if !var.is_empty() => {
                    Some(std::env::var(var).map_err(|_| GatewayError::AuthMissing(var.clone()))?)
                }
                _ => None,
            };
            Arc::new(HttpBackend::new(&endpoint.base_url, api_key, endpoint.timeout()))
        };
        Ok(Self::with_backend(endpoint, backend))
    }

    /// Uses an explicit backend (tests, custom transports).
    pub fn with_backend(endpoint: ModelEndpoint, backend: Arc<dyn Backend>) -> Self {
        Self {
            endpoint,
            backend,
            completions: JsonlCache::in_memory("raw_text"),
            embeddings: JsonlCache::in_memory("vector"),
            counters: Counters::default(),
        }
    }

    /// Persists both caches under `dir` as `<endpoint>.completions.jsonl`
    /// and `<endpoint>.embeddings.jsonl`.
    pub fn with_cache_dir(mut self, dir: &Path) -> Result<Self, GatewayError> {
        let stem = sanitize(&self.endpoint.name);
        self.completions = JsonlCache::open(&dir.join(format!("{stem}.completions.jsonl")), "raw_text")?;
        self.embeddings = JsonlCache::open(&dir.join(format!("{stem}.embeddings.jsonl")), "vector")?;
        Ok(self)
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    pub fn stats(&self) -> GatewayStats {
        let c = &self.counters;
        GatewayStats {
            requests: c.requests.load(Ordering::Relaxed),
            cache_hits: c.cache_hits.load(Ordering::Relaxed),
            network_calls: c.network_calls.load(Ordering::Relaxed),
            embed_texts: c.embed_texts.load(Ordering::Relaxed),
            embed_cache_hits: c.embed_cache_hits.load(Ordering::Relaxed),
        }
    }

    pub fn request_for(&self, messages: &[ChatMessage]) -> ChatRequest {
        ChatRequest {
            model: self.endpoint.model.clone(),
            temperature: self.endpoint.temperature,
            messages: messages.to_vec(),
            extra: self.endpoint.extra.clone(),
        }
    }

    /// Cache key of a request: endpoint identity plus the serialized body
    /// (plus the subject for subject-sensitive backends).
    pub fn cache_key(&self, request: &ChatRequest, subject: Option<&Subject>) -> String {
        let body = serde_json::to_string(request).expect("request serializes");
        let subject_part = match subject {
            Some(s) if self.backend.subject_sensitive() => {
                serde_json::to_string(&(&s.record, &s.demographics)).expect("subject serializes")
            }
            _ => String::new(),
        };
        hash_key(&[&self.endpoint.identity(), &body, &subject_part])
    }

    fn with_retry<T>(&self, mut call: impl FnMut() -> Result<T, TransportError>) -> Result<(T, u32), GatewayError> {
        let policy = &self.endpoint.retry;
        let max = policy.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.counters.network_calls.fetch_add(1, Ordering::Relaxed);
            match call() {
                Ok(v) => return Ok((v, attempt)),
                Err(e) if e.is_retryable() && attempt < max => {
                    tracing::debug!(endpoint = %self.endpoint.name, attempt, error = %e, "retrying");
                    std::thread::sleep(policy.backoff(attempt));
                }
                Err(TransportError::Timeout) => return Err(GatewayError::Timeout { attempts: attempt }),
                Err(e) if e.is_retryable() => return Err(GatewayError::Exhausted { attempts: attempt, last: e }),
                Err(TransportError::Status { code, body }) => return Err(GatewayError::Rejected { code, body }),
                Err(TransportError::Malformed(m)) => return Err(GatewayError::Malformed(m)),
                Err(e) => return Err(GatewayError::Exhausted { attempts: attempt, last: e }),
            }
        }
    }

    /// Sends one chat request (or serves it from cache) and parses the acuity.
    pub fn complete(&self, messages: &[ChatMessage], subject: Option<&Subject>) -> Result<CompletionResult, GatewayError> {
        self.counters.requests.fetch_add(1, Ordering::Relaxed);
        let request = self.request_for(messages);
        let key = self.cache_key(&request, subject);
        if let Some(text) = self.completions.get(&key) {
            self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
            return Ok(CompletionResult::from_text(text, 0, 0, true));
        }
        let start = Instant::now();
        let (text, attempts) = self.with_retry(|| self.backend.chat(&request, subject))?;
        let latency_ms = start.elapsed().as_millis() as u64;
        let text = self.completions.insert(&key, text)?;
        Ok(CompletionResult::from_text(text, latency_ms, attempts, false))
    }

    /// Runs `jobs` with at most `max_in_flight` outstanding requests and
    /// returns one result per job, in input order.
    pub fn complete_batch(&self, jobs: &[CompletionJob]) -> Vec<Result<CompletionResult, GatewayError>> {
        let workers = self.endpoint.max_in_flight.max(1).min(jobs.len());
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<CompletionResult, GatewayError>>>> =
            jobs.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= jobs.len() {
                        break;
                    }
                    let job = &jobs[i];
                    let result = self.complete(&job.messages, job.subject.as_ref());
                    *slots[i].lock().expect("slot poisoned") = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot poisoned").expect("every job ran"))
            .collect()
    }

    fn embedding_model(&self) -> &str {
        self.endpoint.embedding_model.as_deref().unwrap_or(&self.endpoint.model)
    }

    /// One embedding per input text, in order. Cached texts are not re-sent.
    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        let identity = format!("{}|embed:{}", self.endpoint.identity(), self.embedding_model());
        let keys: Vec<String> = texts.iter().map(|t| hash_key(&[&identity, t])).collect();
        self.counters.embed_texts.fetch_add(texts.len() as u64, Ordering::Relaxed);

        let mut pending: Vec<(String, String)> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for (text, key) in texts.iter().zip(&keys) {
            if self.embeddings.get(key).is_some() {
                self.counters.embed_cache_hits.fetch_add(1, Ordering::Relaxed);
            } else if seen.insert(key.clone()) {
                pending.push((key.clone(), text.clone()));
            }
        }
        for chunk in pending.chunks(EMBED_CHUNK) {
            let batch: Vec<String> = chunk.iter().map(|(_, t)| t.clone()).collect();
            let (vectors, _) = self.with_retry(|| self.backend.embed(self.embedding_model(), &batch))?;
            if vectors.len() != chunk.len() {
                return Err(GatewayError::Malformed(format!("expected {} embeddings, got {}", chunk.len(), vectors.len())));
            }
            for ((key, _), v) in chunk.iter().zip(vectors) {
                self.embeddings.insert(key, v)?;
            }
        }
        keys.iter()
            .map(|k| {
                let v = self.embeddings.get(k).expect("embedding cached above");
                EmbeddingVector::new(v).map_err(|e| GatewayError::Malformed(e.to_string()))
            })
            .collect()
    }
}

fn sanitize(name: &str) -> String {
    let s: String = name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    if s.is_empty() { "endpoint".into() } else { s }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// Backend replaying a fixed script of outcomes.
    struct Scripted {
        script: Mutex<VecDeque<Result<String, TransportError>>>,
        calls: AtomicU64,
    }

    impl Scripted {
        fn new(script: Vec<Result<String, TransportError>>) -> Arc<Self> {
            Arc::new(Self { script: Mutex::new(script.into()), calls: AtomicU64::new(0) })
        }
    }

    impl Backend for Scripted {
        fn chat(&self, _r: &ChatRequest, _s: Option<&Subject>) -> Result<String, TransportError> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.script.lock().unwrap().pop_front().unwrap_or(Err(TransportError::Status { code: 500, body: String::new() }))
        }
        fn embed(&self, _m: &str, texts: &[String]) -> Result<Vec<Vec<f64>>, TransportError> {
            self.calls.fetch_add(1, Ordering::Relaxed);
            Ok(texts.iter().map(|t| vec![t.len() as f64, 1.0]).collect())
        }
    }

    fn fast_endpoint(max_attempts: u32) -> ModelEndpoint {
        ModelEndpoint {
            base_url: "http://127.0.0.1:1".into(),
            retry: RetryPolicy { max_attempts, base_backoff_secs: 0.0 },
            ..Default::default()
        }
    }

    fn msgs() -> Vec<ChatMessage> {
        vec![ChatMessage::system("s"), ChatMessage::user("u")]
    }

    #[test]
    fn retry_after_429() {
        let backend = Scripted::new(vec![
            Err(TransportError::Status { code: 429, body: "slow down".into() }),
            Ok("Acuity: 2".into()),
        ]);
        let gw = Gateway::with_backend(fast_endpoint(3), backend.clone());
        let r = gw.complete(&msgs(), None).unwrap();
        assert_eq!(r.attempts, 2);
        assert_eq!(r.parsed.unwrap().get(), 2);
    }

    #[test]
    fn persistent_500_exhausts() {
        let backend = Scripted::new(vec![]);
        let gw = Gateway::with_backend(fast_endpoint(1), backend.clone());
        let err = gw.complete(&msgs(), None).unwrap_err();
        assert!(matches!(err, GatewayError::Exhausted { attempts: 1, last: TransportError::Status { code: 500, .. } }));
        assert_eq!(backend.calls.load(Ordering::Relaxed), 1);
    }

    #[test]
    fn non_retryable_status_is_rejected_immediately() {
        let backend = Scripted::new(vec![Err(TransportError::Status { code: 400, body: "bad".into() })]);
        let gw = Gateway::with_backend(fast_endpoint(5), backend.clone());
        assert!(matches!(gw.complete(&msgs(), None), Err(GatewayError::Rejected { code: 400, .. })));
        assert_eq!(backend.calls.load(Ordering::Relaxed), 1);
    }

    #[test]
    fn timeout_reported() {
        let backend = Scripted::new(vec![Err(TransportError::Timeout), Err(TransportError::Timeout)]);
        let gw = Gateway::with_backend(fast_endpoint(2), backend);
        assert!(matches!(gw.complete(&msgs(), None), Err(GatewayError::Timeout { attempts: 2 })));
    }

    #[test]
    fn cache_hit_skips_backend() {
        let backend = Scripted::new(vec![Ok("Acuity: 4".into())]);
        let gw = Gateway::with_backend(fast_endpoint(1), backend.clone());
        let first = gw.complete(&msgs(), None).unwrap();
        let second = gw.complete(&msgs(), None).unwrap();
        assert!(second.cached);
        assert_eq!(first.raw_text, second.raw_text);
        assert_eq!(backend.calls.load(Ordering::Relaxed), 1);
        assert_eq!(gw.stats().cache_hits, 1);
    }

    #[test]
    fn unparseable_is_recorded_not_fatal() {
        let backend = Scripted::new(vec![Ok("no idea".into())]);
        let gw = Gateway::with_backend(fast_endpoint(1), backend);
        let r = gw.complete(&msgs(), None).unwrap();
        assert_eq!(r.parsed, None);
        assert_eq!(r.parse_error, Some(ParseError::Unparseable));
    }

    #[test]
    fn auth_missing() {
        let ep = ModelEndpoint {
            base_url: "https://example.invalid/v1".into(),
            api_key_env: Some("EDTRIAGE_TEST_KEY_THAT_IS_NOT_SET".into()),
            ..Default::default()
        };
        assert!(matches!(Gateway::new(ep), Err(GatewayError::AuthMissing(_))));
    }

    #[test]
    fn batch_preserves_order() {
        let ep = ModelEndpoint { max_in_flight: 8, ..ModelEndpoint::mock("m", MockSpec::rule_based()) };
        let gw = Gateway::new(ep).unwrap();
        let jobs: Vec<CompletionJob> = (0..40)
            .map(|i| {
                let mut r = TriageRecord::new(format!("r{i}"), "x");
                r.vitals.spo2 = Some(if i % 2 == 0 { 80.0 } else { 99.0 });
                CompletionJob { messages: vec![ChatMessage::user(format!("q{i}"))], subject: Some(Subject::of(&r)) }
            })
            .collect();
        let out = gw.complete_batch(&jobs);
        assert_eq!(out.len(), 40);
        for (i, r) in out.iter().enumerate() {
            let want = if i % 2 == 0 { 1 } else { 5 };
            assert_eq!(r.as_ref().unwrap().parsed.unwrap().get(), want);
        }
    }

    #[test]
    fn embed_caches_and_dedups() {
        let backend = Scripted::new(vec![]);
        let gw = Gateway::with_backend(fast_endpoint(1), backend.clone());
        assert!(gw.embed(&[]).unwrap().is_empty());
        let texts = vec!["a".to_string(), "bb".to_string(), "a".to_string()];
        let v = gw.embed(&texts).unwrap();
        assert_eq!(v[0], v[2]);
        assert_eq!(backend.calls.load(Ordering::Relaxed), 1);
        gw.embed(&texts).unwrap();
        assert_eq!(backend.calls.load(Ordering::Relaxed), 1);
    }

    #[test]
    fn request_wire_shape() {
        let mut ep = fast_endpoint(1);
        ep.extra.insert("reasoning_effort".into(), serde_json::json!("low"));
        let gw = Gateway::with_backend(ep, Scripted::new(vec![]));
        let body = serde_json::to_value(gw.request_for(&msgs())).unwrap();
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["reasoning_effort"], "low");
    }
}
