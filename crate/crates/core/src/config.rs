//! Workbench configuration: one TOML file plus environment overrides for
//! secrets. Precedence is flags > environment > file; flags are applied by
//! the caller after [`Config::apply_env`].
//!
//! Relative paths are resolved against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{FieldMap, Source};
use crate::gateway::{
    ApiStyle, Backend, Budget, CompletionCache, Gateway, HeuristicMock, HttpBackend,
    HttpBackendConfig, OfflineBackend, RateLimiter, RetryPolicy, SamplingParams, ScriptedMock,
};
use crate::metrics::{EmbeddingProvider, HashEmbedder, HttpEmbeddingConfig, HttpEmbeddingProvider};
use crate::prompting::{PromptConfig, Prompter};

pub const ENV_API_KEY: &str = "NLI_DISCUSS_API_KEY";
pub const ENV_SERVICE_TOKEN: &str = "NLI_DISCUSS_SERVICE_TOKEN";
pub const ENV_ENDPOINT: &str = "NLI_DISCUSS_ENDPOINT";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("config {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// Deterministic heuristic mock.
    Mock,
    /// Rule file of prompt substrings and canned answers.
    Scripted,
    Http,
    /// Cache only; any miss is an error.
    Offline,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mock" => Ok(BackendKind::Mock),
            "scripted" => Ok(BackendKind::Scripted),
            "http" => Ok(BackendKind::Http),
            "offline" => Ok(BackendKind::Offline),
            other => Err(format!("unknown backend {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Mock seed.
    pub seed: u64,
    /// Rule file for the scripted backend.
    pub script: Option<PathBuf>,
    pub endpoint: String,
    pub model: String,
    pub style: ApiStyle,
    pub timeout_secs: u64,
    /// Backend id for offline replays; must match the recorded run.
    pub offline_id: Option<String>,
    /// Requests per second across all workers; 0 disables limiting.
    pub rate_limit: f64,
    #[serde(skip)]
    pub api_key: Option<String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Mock,
            seed: 0,
            script: None,
            endpoint: "http://127.0.0.1:8000/v1/completions".into(),
            model: "gpt-3.5-turbo-instruct".into(),
            style: ApiStyle::Completions,
            timeout_secs: 60,
            offline_id: None,
            rate_limit: 0.0,
            api_key: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmbedderKind {
    Hash,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub kind: EmbedderKind,
    pub dim: usize,
    pub seed: u64,
    pub endpoint: String,
    pub batch_size: usize,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self { kind: EmbedderKind::Hash, dim: 64, seed: 0, endpoint: String::new(), batch_size: 32 }
    }
}

/// Input files. Keys of `corpora` are source names (`snli-dev`, `anli-r1`,
/// ...).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub corpora: BTreeMap<String, PathBuf>,
    /// Problems referenced by the discussion records.
    pub discussion_problems: Option<PathBuf>,
    /// Tagged human discussion records.
    pub discussions: Option<PathBuf>,
    /// Exemplar pack, JSONL of `{problem, discussion}`.
    pub exemplars: Option<PathBuf>,
    /// Discussions used by the random-discussion noise.
    pub noise_pool: Option<PathBuf>,
    pub fields: FieldMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub turn_budget: usize,
    /// Turns the scripted scenario agent speaks.
    pub agent_turns: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self { turn_budget: crate::session::DEFAULT_TURN_BUDGET, agent_turns: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    pub event_log: Option<PathBuf>,
    /// Allowed CORS origins; empty allows any.
    pub cors_origins: Vec<String>,
    #[serde(skip)]
    pub token: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self { bind: "127.0.0.1".into(), port: 8080, event_log: None, cors_origins: Vec::new(), token: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Worker threads; 0 means one per core.
    pub workers: usize,
    pub cache_dir: Option<PathBuf>,
    pub backend: BackendConfig,
    pub sampling: SamplingParams,
    pub retry: RetryPolicy,
    pub budget: Budget,
    pub prompt: PromptConfig,
    pub embedding: EmbeddingConfig,
    pub data: DataConfig,
    pub session: SessionConfig,
    pub service: ServiceConfig,
    /// Directory relative paths resolve against. Not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 0,
            workers: 0,
            cache_dir: None,
            backend: BackendConfig::default(),
            sampling: SamplingParams::default(),
            retry: RetryPolicy::default(),
            budget: Budget::default(),
            prompt: PromptConfig::default(),
            embedding: EmbeddingConfig::default(),
            data: DataConfig::default(),
            session: SessionConfig::default(),
            service: ServiceConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), reason: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        let mut cfg = Self::from_toml(&text, &path.display().to_string())?;
        let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        cfg.base_dir = std::path::absolute(dir)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Secrets and endpoint from the environment.
    pub fn apply_env(&mut self) {
        self.apply_env_from(|k| std::env::var(k).ok());
    }

    pub fn apply_env_from(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(k) = get(ENV_API_KEY).filter(|s| !s.is_empty()) {
            self.backend.api_key = Some(k);
        }
        if let Some(t) = get(ENV_SERVICE_TOKEN).filter(|s| !s.is_empty()) {
            self.service.token = Some(t);
        }
        if let Some(e) = get(ENV_ENDPOINT).filter(|s| !s.is_empty()) {
            self.backend.endpoint = e;
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Make every configured path absolute so the config can be snapshotted
    /// and reloaded from anywhere.
    pub fn absolutize(&mut self) {
        let base = self.base_dir.clone();
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.data.corpora.values_mut().for_each(fix);
        for p in [
            &mut self.data.discussion_problems,
            &mut self.data.discussions,
            &mut self.data.exemplars,
            &mut self.data.noise_pool,
            &mut self.cache_dir,
            &mut self.backend.script,
            &mut self.service.event_log,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn corpus_path(&self, source: Source) -> Option<PathBuf> {
        self.data.corpora.get(source.as_str()).map(|p| self.resolve(p))
    }

    pub fn prompter(&self) -> Prompter {
        Prompter::new(self.prompt.clone())
    }

    pub fn build_backend(&self) -> Result<Arc<dyn Backend>, ConfigError> {
        let b = &self.backend;
        Ok(match b.kind {
            BackendKind::Mock => Arc::new(HeuristicMock::new(b.seed)),
            BackendKind::Scripted => {
                let path = b
                    .script
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("scripted backend needs backend.script".into()))?;
                let path = self.resolve(path);
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| ConfigError::Invalid(format!("{}: {e}", path.display())))?;
                let digest = hex::encode(Sha256::digest(text.as_bytes()));
                let mock = ScriptedMock::from_jsonl(&text)
                    .map_err(ConfigError::Invalid)?
                    .with_id(format!("scripted-{}", &digest[..12]));
                Arc::new(mock)
            }
            BackendKind::Http => Arc::new(
                HttpBackend::new(HttpBackendConfig {
                    endpoint: b.endpoint.clone(),
                    model: b.model.clone(),
                    style: b.style,
                    api_key: b.api_key.clone(),
                    timeout_secs: b.timeout_secs,
                })
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
            ),
            BackendKind::Offline => {
                let id = b
                    .offline_id
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid("offline backend needs backend.offline_id".into()))?;
                Arc::new(OfflineBackend::new(id))
            }
        })
    }

    /// Gateway with cache, retries, budget, and rate limit from the config.
    /// `cache_dir` overrides the configured cache location.
    pub fn build_gateway(&self, cache_dir: Option<&Path>) -> Result<Gateway, ConfigError> {
        let mut gw = Gateway::new(self.build_backend()?).with_retry(self.retry).with_budget(self.budget);
        let dir = cache_dir.map(Path::to_path_buf).or_else(|| self.cache_dir.as_ref().map(|d| self.resolve(d)));
        let cache = match dir {
            Some(d) => CompletionCache::on_disk(d).map_err(|e| ConfigError::Invalid(format!("cache dir: {e}")))?,
            None => CompletionCache::in_memory(),
        };
        gw = gw.with_cache(Arc::new(cache));
        if self.backend.rate_limit > 0.0 {
            gw = gw.with_rate_limiter(Arc::new(RateLimiter::per_second(self.backend.rate_limit)));
        }
        Ok(gw)
    }

    pub fn build_embedder(&self) -> Result<Box<dyn EmbeddingProvider>, ConfigError> {
        let e = &self.embedding;
        Ok(match e.kind {
            EmbedderKind::Hash => Box::new(HashEmbedder::new(e.dim, e.seed)),
            EmbedderKind::Http => Box::new(
                HttpEmbeddingProvider::new(HttpEmbeddingConfig {
                    endpoint: e.endpoint.clone(),
                    batch_size: e.batch_size,
                    timeout_secs: self.backend.timeout_secs,
                })
                .map_err(|err| ConfigError::Invalid(err.to_string()))?,
            ),
        })
    }
}
