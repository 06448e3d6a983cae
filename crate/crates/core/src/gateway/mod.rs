//! Uniform access to completion backends.
//!
//! [`Gateway`] wraps one [`Backend`] with the completion cache, retries
//! with exponential backoff, a request/token budget, a shared rate limiter,
//! stop-sequence truncation, and per-run usage accounting.

mod backend;
mod cache;
mod http;
mod label;

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    stable_hash, Backend, BackendError, BackendRequest, FinishReason, FnBackend, HeuristicMock,
    OfflineBackend, RawCompletion, ScriptRule, ScriptedMock,
};
pub use cache::{CacheKey, CompletionCache};
pub use http::{parse_response, ApiStyle, HttpBackend, HttpBackendConfig};
pub use label::{parse_label, LabelParseError};

use crate::prompting::RenderedPrompt;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempts: {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("authentication failed: {0}")]
    AuthError(String),
    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),
    #[error("backend error: {0}")]
    Backend(String),
    #[error("invalid sampling parameters: {0}")]
    InvalidParams(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("unknown run {0:?}")]
    UnknownRun(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub n_samples: usize,
    pub max_tokens: usize,
    /// Only honored by mocks and by servers that accept a seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self { temperature: 0.7, n_samples: 10, max_tokens: 256, seed: None }
    }
}

impl SamplingParams {
    pub fn single(&self) -> Self {
        Self { n_samples: 1, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(GatewayError::InvalidParams("temperature must be >= 0".into()));
        }
        if self.n_samples == 0 {
            return Err(GatewayError::InvalidParams("n_samples must be positive".into()));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidParams("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    pub backend_id: String,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 3, base_delay_ms: 250, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { max_retries: 0, base_delay_ms: 0, max_delay_ms: 0 }
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Budget {
    pub max_requests: Option<u64>,
    pub max_tokens: Option<u64>,
}

/// Minimum spacing between backend requests, shared by every thread using
/// the gateway.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    pub fn per_second(rps: f64) -> Self {
        Self {
            interval: Duration::from_secs_f64(1.0 / rps.max(1e-9)),
            next: Mutex::new(Instant::now()),
        }
    }

    pub fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock();
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackendUsage {
    pub requests: u64,
    pub cache_hits: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub failures: u64,
    /// True when any token count came from the whitespace estimator.
    pub estimated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageReport {
    pub run_id: String,
    pub backends: BTreeMap<String, BackendUsage>,
}

impl UsageReport {
    pub fn totals(&self) -> BackendUsage {
        let mut t = BackendUsage::default();
        for u in self.backends.values() {
            t.requests += u.requests;
            t.cache_hits += u.cache_hits;
            t.prompt_tokens += u.prompt_tokens;
            t.completion_tokens += u.completion_tokens;
            t.failures += u.failures;
            t.estimated |= u.estimated;
        }
        t
    }
}

/// Token estimate used when a backend reports none: whitespace-separated
/// words.
pub fn estimate_tokens(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Cut `text` at the earliest stop sequence. Occurrences inside leading
/// whitespace are ignored so a completion opening with a newline is not
/// emptied by a `"\n"` stop. Returns whether a cut happened.
pub fn truncate_at_stop(text: &str, stops: &[String]) -> (String, bool) {
    let start = text.len() - text.trim_start().len();
    let cut = stops
        .iter()
        .filter(|s| !s.is_empty())
        .filter_map(|s| text[start..].find(s.as_str()).map(|i| i + start))
        .min();
    match cut {
        Some(i) => (text[..i].to_string(), true),
        None => (text.to_string(), false),
    }
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    cache: Option<Arc<CompletionCache>>,
    retry: RetryPolicy,
    budget: Budget,
    limiter: Option<Arc<RateLimiter>>,
    prompt_log: Option<PathBuf>,
    run_id: RwLock<String>,
    usage: Mutex<BTreeMap<String, UsageReport>>,
    requests_sent: AtomicU64,
    tokens_used: AtomicU64,
}

pub const DEFAULT_RUN: &str = "default";

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        let gw = Self {
            backend,
            cache: None,
            retry: RetryPolicy::default(),
            budget: Budget::default(),
            limiter: None,
            prompt_log: None,
            run_id: RwLock::new(DEFAULT_RUN.to_string()),
            usage: Mutex::new(BTreeMap::new()),
            requests_sent: AtomicU64::new(0),
            tokens_used: AtomicU64::new(0),
        };
        gw.start_run(DEFAULT_RUN);
        gw
    }

    pub fn with_cache(mut self, cache: Arc<CompletionCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_budget(mut self, budget: Budget) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_rate_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    /// Store every prompt text as `<dir>/<fingerprint>.txt`.
    pub fn with_prompt_log(mut self, dir: impl Into<PathBuf>) -> Self {
        self.prompt_log = Some(dir.into());
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    /// Make `run_id` the run that subsequent calls are accounted under.
    pub fn start_run(&self, run_id: &str) {
        self.usage.lock().entry(run_id.to_string()).or_insert_with(|| UsageReport {
            run_id: run_id.to_string(),
            backends: BTreeMap::new(),
        });
        *self.run_id.write() = run_id.to_string();
    }

    pub fn record_usage(&self, run_id: &str) -> Result<UsageReport, GatewayError> {
        self.usage
            .lock()
            .get(run_id)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownRun(run_id.to_string()))
    }

    fn account(&self, f: impl FnOnce(&mut BackendUsage)) {
        let run = self.run_id.read().clone();
        let mut usage = self.usage.lock();
        let report = usage.entry(run.clone()).or_insert_with(|| UsageReport {
            run_id: run,
            backends: BTreeMap::new(),
        });
        f(report.backends.entry(self.backend.id().to_string()).or_default());
    }

    /// `params.n_samples` completions for `prompt`, sample indices
    /// `0..n_samples`.
    pub fn complete(
        &self,
        prompt: &RenderedPrompt,
        params: &SamplingParams,
    ) -> Result<Vec<Completion>, GatewayError> {
        params.validate()?;
        (0..params.n_samples)
            .map(|i| self.complete_sample(prompt, params, i))
            .collect()
    }

    pub fn complete_sample(
        &self,
        prompt: &RenderedPrompt,
        params: &SamplingParams,
        sample_index: usize,
    ) -> Result<Completion, GatewayError> {
        if sample_index == 0 {
            self.log_prompt(prompt)?;
        }
        let key = CacheKey::new(&prompt.fingerprint, params, self.backend.id(), sample_index);
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key) {
                self.account(|u| u.cache_hits += 1);
                return Ok(hit);
            }
        }
        let completion = self.request_with_retries(prompt, params, sample_index)?;
        if let Some(cache) = &self.cache {
            cache.put(&key, &completion).map_err(|e| GatewayError::Cache(e.to_string()))?;
        }
        Ok(completion)
    }

    fn log_prompt(&self, prompt: &RenderedPrompt) -> Result<(), GatewayError> {
        let Some(dir) = &self.prompt_log else { return Ok(()) };
        let path = dir.join(format!("{}.txt", prompt.fingerprint));
        if path.exists() {
            return Ok(());
        }
        let io = |e: std::io::Error| GatewayError::Cache(format!("prompt log: {e}"));
        fs::create_dir_all(dir).map_err(io)?;
        let tmp = dir.join(format!(".{}.{}.tmp", prompt.fingerprint, uuid::Uuid::new_v4().simple()));
        fs::write(&tmp, &prompt.text).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)
    }

    fn check_budget(&self) -> Result<(), GatewayError> {
        if let Some(max) = self.budget.max_requests {
            if self.requests_sent.load(Ordering::SeqCst) >= max {
                return Err(GatewayError::BudgetExceeded(format!("request ceiling {max} reached")));
            }
        }
        if let Some(max) = self.budget.max_tokens {
            if self.tokens_used.load(Ordering::SeqCst) >= max {
                return Err(GatewayError::BudgetExceeded(format!("token ceiling {max} reached")));
            }
        }
        Ok(())
    }

    fn request_with_retries(
        &self,
        prompt: &RenderedPrompt,
        params: &SamplingParams,
        sample_index: usize,
    ) -> Result<Completion, GatewayError> {
        let request = BackendRequest { prompt, params, sample_index };
        let mut attempt = 0u32;
        loop {
            self.check_budget()?;
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            self.requests_sent.fetch_add(1, Ordering::SeqCst);
            let started = Instant::now();
            let result = self.backend.generate(&request);
            let latency_ms = started.elapsed().as_millis() as u64;
            match result {
                Ok(raw) => {
                    let estimated = raw.prompt_tokens.is_none() || raw.completion_tokens.is_none();
                    let pt = raw.prompt_tokens.unwrap_or_else(|| estimate_tokens(&prompt.text));
                    let ct = raw.completion_tokens.unwrap_or_else(|| estimate_tokens(&raw.text));
                    self.tokens_used.fetch_add(pt + ct, Ordering::SeqCst);
                    self.account(|u| {
                        u.requests += 1;
                        u.prompt_tokens += pt;
                        u.completion_tokens += ct;
                        u.estimated |= estimated;
                    });
                    let (text, cut) = truncate_at_stop(&raw.text, &prompt.stop_sequences);
                    let finish_reason = if text.trim().is_empty() {
                        FinishReason::Error
                    } else if cut {
                        FinishReason::Stop
                    } else {
                        raw.finish_reason
                    };
                    return Ok(Completion {
                        text,
                        finish_reason,
                        backend_id: self.backend.id().to_string(),
                        latency_ms,
                    });
                }
                Err(err) => {
                    self.account(|u| {
                        u.requests += 1;
                        u.failures += 1;
                    });
                    match err {
                        BackendError::Transient(reason) => {
                            if attempt >= self.retry.max_retries {
                                return Err(GatewayError::BackendUnavailable {
                                    attempts: attempt + 1,
                                    reason,
                                });
                            }
                            log::warn!("transient backend failure (attempt {}): {reason}", attempt + 1);
                            thread::sleep(self.retry.delay(attempt));
                            attempt += 1;
                        }
                        BackendError::Auth(reason) => return Err(GatewayError::AuthError(reason)),
                        BackendError::Fatal(reason) => return Err(GatewayError::Backend(reason)),
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::PromptMode;
    use std::sync::atomic::AtomicUsize;

    fn prompt(stops: &[&str]) -> RenderedPrompt {
        RenderedPrompt::new(
            "Premise: a Hypothesis: b Label:".into(),
            stops.iter().map(|s| s.to_string()).collect(),
            PromptMode::ZeroShot,
        )
    }

    #[test]
    fn constant_mock_fills_all_samples() {
        let gw = Gateway::new(Arc::new(ScriptedMock::constant("neutral")));
        let out = gw.complete(&prompt(&[]), &SamplingParams::default()).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|c| c.text == "neutral"));
    }

    #[test]
    fn cache_serves_second_call() {
        let gw = Gateway::new(Arc::new(ScriptedMock::constant("neutral")))
            .with_cache(Arc::new(CompletionCache::in_memory()));
        let params = SamplingParams { n_samples: 1, ..Default::default() };
        gw.start_run("r");
        let first = gw.complete(&prompt(&[]), &params).unwrap();
        let second = gw.complete(&prompt(&[]), &params).unwrap();
        assert_eq!(first, second);
        let u = gw.record_usage("r").unwrap().totals();
        assert_eq!((u.requests, u.cache_hits), (1, 1));
    }

    #[test]
    fn usage_three_calls_one_cached() {
        let gw = Gateway::new(Arc::new(ScriptedMock::constant("neutral")))
            .with_cache(Arc::new(CompletionCache::in_memory()));
        gw.start_run("run");
        assert_eq!(gw.record_usage("run").unwrap().totals(), BackendUsage::default());
        let params = SamplingParams { n_samples: 1, ..Default::default() };
        let a = RenderedPrompt::new("one two".into(), vec![], PromptMode::ZeroShot);
        let b = RenderedPrompt::new("three four five".into(), vec![], PromptMode::ZeroShot);
        gw.complete(&a, &params).unwrap();
        gw.complete(&b, &params).unwrap();
        gw.complete(&a, &params).unwrap();
        let u = gw.record_usage("run").unwrap().totals();
        assert_eq!((u.requests, u.cache_hits), (2, 1));
        // Whitespace estimate: prompts 2 + 3 words, each completion 1 word.
        assert_eq!(u.prompt_tokens, 5);
        assert_eq!(u.completion_tokens, 2);
        assert!(u.estimated);
        assert_eq!(gw.record_usage("nope"), Err(GatewayError::UnknownRun("nope".into())));
    }

    #[test]
    fn stop_truncation() {
        let gw = Gateway::new(Arc::new(ScriptedMock::constant("yes. Human: more")));
        let params = SamplingParams { n_samples: 1, ..Default::default() };
        let out = gw.complete(&prompt(&["Human:"]), &params).unwrap();
        assert_eq!(out[0].text, "yes. ");
        assert_eq!(out[0].finish_reason, FinishReason::Stop);
        assert_eq!(truncate_at_stop("\nneutral\nx", &["\n".into()]).0, "\nneutral");
    }

    #[test]
    fn transient_failures_retry_then_give_up() {
        let calls = Arc::new(AtomicUsize::new(0));
        let c = calls.clone();
        let flaky = FnBackend::new("flaky", move |_| {
            if c.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(BackendError::Transient("503".into()))
            } else {
                Ok(RawCompletion::text("neutral"))
            }
        });
        let retry = RetryPolicy { max_retries: 3, base_delay_ms: 1, max_delay_ms: 2 };
        let gw = Gateway::new(Arc::new(flaky)).with_retry(retry);
        let params = SamplingParams { n_samples: 1, ..Default::default() };
        assert_eq!(gw.complete(&prompt(&[]), &params).unwrap()[0].text, "neutral");
        assert_eq!(calls.load(Ordering::SeqCst), 3);

        let down = FnBackend::new("down", |_| Err(BackendError::Transient("timeout".into())));
        let gw = Gateway::new(Arc::new(down)).with_retry(retry);
        assert!(matches!(
            gw.complete(&prompt(&[]), &params),
            Err(GatewayError::BackendUnavailable { attempts: 4, .. })
        ));

        let denied = FnBackend::new("denied", |_| Err(BackendError::Auth("401".into())));
        let gw = Gateway::new(Arc::new(denied)).with_retry(retry);
        assert!(matches!(gw.complete(&prompt(&[]), &params), Err(GatewayError::AuthError(_))));
    }

    #[test]
    fn budget_ceiling() {
        let gw = Gateway::new(Arc::new(ScriptedMock::constant("neutral")))
            .with_budget(Budget { max_requests: Some(3), max_tokens: None });
        let params = SamplingParams { n_samples: 5, ..Default::default() };
        assert!(matches!(
            gw.complete(&prompt(&[]), &params),
            Err(GatewayError::BudgetExceeded(_))
        ));
    }

    #[test]
    fn invalid_params_rejected() {
        let gw = Gateway::new(Arc::new(ScriptedMock::constant("neutral")));
        let params = SamplingParams { n_samples: 0, ..Default::default() };
        assert!(matches!(gw.complete(&prompt(&[]), &params), Err(GatewayError::InvalidParams(_))));
    }

    #[test]
    fn rate_limiter_spaces_requests() {
        let l = RateLimiter::per_second(200.0);
        let start = Instant::now();
        for _ in 0..5 {
            l.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(15));
    }
}
