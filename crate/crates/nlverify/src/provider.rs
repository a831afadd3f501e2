//! Completion providers: the offline rule provider, an HTTP client for
//! OpenAI-compatible chat endpoints, and wrappers for counting and tracing.

use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use nlverify_core::prompt::PromptBundle;
use nlverify_core::{rules, PassTag};
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub api_key_env: String,
    pub temperature: f64,
    pub max_retries: u32,
    /// Per-request timeout in seconds.
    pub timeout: u64,
    pub max_inflight: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            endpoint: "http://localhost:8000/v1".into(),
            model: "default".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            temperature: 0.0,
            max_retries: 3,
            timeout: 120,
            max_inflight: 4,
        }
    }
}

impl ProviderConfig {
    /// The first out-of-range field, as (key, message).
    pub fn check(&self) -> Result<(), (&'static str, String)> {
        if self.timeout == 0 {
            return Err(("timeout", "must be positive".into()));
        }
        if self.max_inflight == 0 {
            return Err(("max_inflight", "must be at least 1".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(("temperature", "must be a non-negative number".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompletionResult {
    pub text: String,
    pub prompt_chars: usize,
    pub completion_chars: usize,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("endpoint rejected the request with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("unusable response: {0}")]
    BadResponse(String),
    #[error("{0}")]
    Other(String),
}

pub trait Provider: Send + Sync {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError>;

    /// `complete` for a known function and pass; wrappers use the labels.
    fn complete_for(&self, function: &str, pass: PassTag, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        let _ = (function, pass);
        self.complete(bundle)
    }
}

impl<P: Provider + ?Sized> Provider for &P {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        (**self).complete(bundle)
    }

    fn complete_for(&self, function: &str, pass: PassTag, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        (**self).complete_for(function, pass, bundle)
    }
}

impl<P: Provider + ?Sized> Provider for Box<P> {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        (**self).complete(bundle)
    }

    fn complete_for(&self, function: &str, pass: PassTag, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        (**self).complete_for(function, pass, bundle)
    }
}

pub fn result_for(bundle: &PromptBundle, text: String, attempts: u32) -> CompletionResult {
    CompletionResult { prompt_chars: bundle.total_chars(), completion_chars: text.chars().count(), text, attempts }
}

/// Deterministic lexical answers; never touches the network.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleProvider;

impl Provider for RuleProvider {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        Ok(result_for(bundle, rules::respond(bundle), 1))
    }
}

/// Counting semaphore bounding in-flight requests.
pub struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

pub struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    pub fn new(n: usize) -> Self {
        Semaphore { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt {
    Done(String),
    Retry(String),
    Fail(ProviderError),
}

pub struct HttpProvider {
    cfg: ProviderConfig,
    agent: ureq::Agent,
    gate: Semaphore,
    backoff_base: Duration,
}

impl HttpProvider {
    pub fn new(cfg: ProviderConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        let gate = Semaphore::new(cfg.max_inflight);
        HttpProvider { cfg, agent, gate, backoff_base: Duration::from_secs(1) }
    }

    /// Shorten the backoff base, for tests against local mock servers.
    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.cfg.endpoint.trim_end_matches('/'))
    }

    /// Delay before retry number `retry` (1-based): base * 2^(retry-1), plus up to 25% jitter.
    pub fn backoff(&self, retry: u32) -> Duration {
        let exp = self.backoff_base.saturating_mul(1u32 << (retry - 1).min(16));
        let jitter: f64 = rand::thread_rng().gen_range(0.0..0.25);
        exp + exp.mul_f64(jitter)
    }

    fn request_body(&self, bundle: &PromptBundle) -> Value {
        let mut messages = Vec::new();
        if let Some(s) = &bundle.system {
            messages.push(json!({"role": "system", "content": s}));
        }
        messages.push(json!({"role": "user", "content": bundle.user}));
        json!({"model": self.cfg.model, "messages": messages, "temperature": self.cfg.temperature})
    }

    fn attempt(&self, body: &Value) -> Attempt {
        let _permit = self.gate.acquire();
        let mut req = self.agent.post(&self.url());
        if let Ok(key) = std::env::var(&self.cfg.api_key_env) {
            if !key.is_empty() {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(format!("transport error: {e}")),
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().unwrap_or_default();
        if status == 429 || status >= 500 {
            return Attempt::Retry(format!("HTTP {status}"));
        }
        if !(200..300).contains(&status) {
            return Attempt::Fail(ProviderError::Rejected { status, body: text.chars().take(500).collect() });
        }
        let v: Value = match serde_json::from_str(&text) {
            Ok(v) => v,
            Err(e) => return Attempt::Fail(ProviderError::BadResponse(format!("response is not JSON: {e}"))),
        };
        match v.pointer("/choices/0/message/content").and_then(Value::as_str) {
            Some(c) => Attempt::Done(c.to_string()),
            None => Attempt::Fail(ProviderError::BadResponse("missing choices[0].message.content".into())),
        }
    }

    /// Check that the endpoint's host accepts TCP connections.
    pub fn preflight(&self) -> Result<(), String> {
        let uri: ureq::http::Uri = self.cfg.endpoint.parse().map_err(|e| format!("invalid endpoint `{}`: {e}", self.cfg.endpoint))?;
        let host = uri.host().ok_or_else(|| format!("endpoint `{}` has no host", self.cfg.endpoint))?;
        let port = uri.port_u16().unwrap_or(if uri.scheme_str() == Some("https") { 443 } else { 80 });
        let addrs: Vec<_> = (host, port).to_socket_addrs().map_err(|e| format!("cannot resolve {host}: {e}"))?.collect();
        let timeout = Duration::from_secs(self.cfg.timeout.clamp(1, 5));
        let mut last = format!("no address for {host}");
        for a in addrs {
            match TcpStream::connect_timeout(&a, timeout) {
                Ok(_) => return Ok(()),
                Err(e) => last = format!("cannot connect to {a}: {e}"),
            }
        }
        Err(last)
    }
}

impl Provider for HttpProvider {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        let body = self.request_body(bundle);
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Attempt::Done(text) => return Ok(result_for(bundle, text, attempts)),
                Attempt::Fail(e) => return Err(e),
                Attempt::Retry(why) => {
                    if attempts > self.cfg.max_retries {
                        return Err(ProviderError::Exhausted { attempts, last: why });
                    }
                    let wait = self.backoff(attempts);
                    log::warn!("completion attempt {attempts} failed ({why}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                }
            }
        }
    }
}

/// Counts calls and records the (function, pass) of each in call order.
pub struct Recording<P> {
    inner: P,
    calls: AtomicUsize,
    trace: Mutex<Vec<(String, PassTag)>>,
}

impl<P: Provider> Recording<P> {
    pub fn new(inner: P) -> Self {
        Recording { inner, calls: AtomicUsize::new(0), trace: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn trace(&self) -> Vec<(String, PassTag)> {
        self.trace.lock().expect("trace poisoned").clone()
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.trace.lock().expect("trace poisoned").clear();
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

impl<P: Provider> Provider for Recording<P> {
    fn complete(&self, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(bundle)
    }

    fn complete_for(&self, function: &str, pass: PassTag, bundle: &PromptBundle) -> Result<CompletionResult, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.trace.lock().expect("trace poisoned").push((function.to_string(), pass));
        self.inner.complete_for(function, pass, bundle)
    }
}
