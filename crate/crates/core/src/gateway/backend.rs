//! Completion backends: the trait plus the in-process mocks.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::NLILabel;
use crate::gateway::SamplingParams;
use crate::prompting::RenderedPrompt;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    /// Worth retrying: timeouts, rate limits, 5xx.
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("backend failure: {0}")]
    Fatal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy)]
pub struct BackendRequest<'a> {
    pub prompt: &'a RenderedPrompt,
    pub params: &'a SamplingParams,
    pub sample_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCompletion {
    pub text: String,
    pub finish_reason: FinishReason,
    /// Reported by the backend; `None` means the gateway estimates.
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

impl RawCompletion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            prompt_tokens: None,
            completion_tokens: None,
        }
    }
}

pub trait Backend: Send + Sync {
    fn id(&self) -> &str;

    fn generate(&self, request: &BackendRequest<'_>) -> Result<RawCompletion, BackendError>;
}

/// Stable 64-bit value from a seed and a list of string parts.
pub fn stable_hash(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn request_hash(request: &BackendRequest<'_>, seed: u64) -> u64 {
    stable_hash(
        seed,
        &[&request.prompt.fingerprint, &request.sample_index.to_string()],
    )
}

type ReplyFn = dyn Fn(&BackendRequest<'_>) -> Result<RawCompletion, BackendError> + Send + Sync;

/// Backend driven by a closure. Handy for scripted personas in tests.
pub struct FnBackend {
    id: String,
    reply: Box<ReplyFn>,
}

impl FnBackend {
    pub fn new<F>(id: impl Into<String>, reply: F) -> Self
    where
        F: Fn(&BackendRequest<'_>) -> Result<RawCompletion, BackendError> + Send + Sync + 'static,
    {
        Self { id: id.into(), reply: Box::new(reply) }
    }

    /// Closure over the prompt text and sample index returning plain text.
    pub fn text<F>(id: impl Into<String>, reply: F) -> Self
    where
        F: Fn(&str, usize) -> String + Send + Sync + 'static,
    {
        Self::new(id, move |req| Ok(RawCompletion::text(reply(&req.prompt.text, req.sample_index))))
    }
}

impl Backend for FnBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &BackendRequest<'_>) -> Result<RawCompletion, BackendError> {
        (self.reply)(request)
    }
}

/// One line of a mock script: the first rule whose `match` is a substring
/// of the prompt answers it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub responses: Vec<String>,
}

/// Mock backend answering from a JSONL script of
/// `{"match": "<prompt substring>", "responses": ["...", ...]}` lines.
///
/// Without a seed, sample `i` gets `responses[i % len]`. With a seed
/// (mock seed, else `SamplingParams::seed`) the index is a hash of seed,
/// prompt fingerprint, and sample index, so outputs never depend on call
/// order.
pub struct ScriptedMock {
    id: String,
    rules: Vec<ScriptRule>,
    seed: Option<u64>,
    fallback: Option<Box<dyn Backend>>,
}

impl ScriptedMock {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        Self { id: "scripted".into(), rules, seed: None, fallback: None }
    }

    pub fn constant(text: impl Into<String>) -> Self {
        Self::new(vec![ScriptRule { pattern: String::new(), responses: vec![text.into()] }])
    }

    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut rules = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rule: ScriptRule =
                serde_json::from_str(line).map_err(|e| format!("mock script line {}: {e}", i + 1))?;
            if rule.responses.is_empty() {
                return Err(format!("mock script line {}: empty responses", i + 1));
            }
            rules.push(rule);
        }
        Ok(Self::new(rules))
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_jsonl(&text)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_fallback(mut self, fallback: Box<dyn Backend>) -> Self {
        self.fallback = Some(fallback);
        self
    }
}

impl Backend for ScriptedMock {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &BackendRequest<'_>) -> Result<RawCompletion, BackendError> {
        let Some(rule) = self.rules.iter().find(|r| request.prompt.text.contains(&r.pattern)) else {
            return match &self.fallback {
                Some(fb) => fb.generate(request),
                None => Err(BackendError::Fatal("no mock rule matches the prompt".into())),
            };
        };
        let n = rule.responses.len();
        let idx = match self.seed.or(request.params.seed) {
            Some(seed) => (request_hash(request, seed) % n as u64) as usize,
            None => request.sample_index % n,
        };
        Ok(RawCompletion::text(rule.responses[idx].clone()))
    }
}

/// Mock that produces structurally plausible output for every prompt kind
/// the workbench renders, deterministically from the prompt and sample
/// index:
///
/// * pseudo-generation prompts get a four-turn Human1/Human2 dialogue that
///   follows the requested labels;
/// * prompts ending in `Label:` get a label word;
/// * prompts ending in a speaker marker get a one-sentence argument.
pub struct HeuristicMock {
    id: String,
    seed: u64,
}

impl HeuristicMock {
    pub fn new(seed: u64) -> Self {
        Self { id: format!("mock-{seed}"), seed }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

fn pseudo_labels_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"Human1's label is (?:a |an )?(\w+), and Human2's label is (?:a |an )?(\w+)\. In the end, they agree on the label of (\w+)\.",
        )
        .expect("valid regex")
    })
}

const ARGUMENTS: [&str; 4] = [
    "I think it is {label}, because the hypothesis only restates part of the premise.",
    "It could be {label}, since the premise does not say anything that rules it out.",
    "I would say {label}. The situations described are not necessarily the same.",
    "Considering the general case, {label} seems more natural to me.",
];

impl Backend for HeuristicMock {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &BackendRequest<'_>) -> Result<RawCompletion, BackendError> {
        let text = request.prompt.text.as_str();
        let h = request_hash(request, self.seed);
        let label = NLILabel::ALL[(h % 3) as usize];

        if let Some(c) = pseudo_labels_re().captures(text) {
            let (h1, h2, fin) = (&c[1], &c[2], &c[3]);
            return Ok(RawCompletion::text(format!(
                "Human1: I think the premise and hypothesis are {h1}. \
                 Human2: I think they are {h2}, because the hypothesis adds details the premise does not mention. \
                 Human1: Could you explain why it is not {h1}? \
                 Human2: Looking at it again, I agree that the label should be {fin}."
            )));
        }
        let trimmed = text.trim_end();
        let reply = if trimmed.ends_with("Label:") {
            format!(" {label}")
        } else if trimmed.ends_with("System:") {
            format!(" I see your point. After considering it, I think the label is {label}.")
        } else {
            let tmpl = ARGUMENTS[((h >> 8) % ARGUMENTS.len() as u64) as usize];
            format!(" {}", tmpl.replace("{label}", label.as_str()))
        };
        Ok(RawCompletion::text(reply))
    }
}

/// Backend that refuses every request. Used for offline replays, where all
/// answers must come from the cache.
pub struct OfflineBackend {
    id: String,
}

impl OfflineBackend {
    pub fn new(id: impl Into<String>) -> Self {
        Self { id: id.into() }
    }
}

impl Backend for OfflineBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, _request: &BackendRequest<'_>) -> Result<RawCompletion, BackendError> {
        Err(BackendError::Fatal("offline replay: completion not in cache".into()))
    }
}
