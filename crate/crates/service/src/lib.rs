//! HTTP front end for live discussion sessions.
//!
//! Every state change is one core operation: `start_session`,
//! `human_turn`, or `finalize`. Sessions are kept in memory and, when an
//! event log is configured, appended to it after each change so a restart
//! rebuilds the same store.
//!
//! Endpoints:
//!
//! | method | path | body / query |
//! |---|---|---|
//! | GET | `/health` | |
//! | GET | `/problems/sample` | `filter=three-of-five&n=K&seed=S&corpus=C&blind=B` |
//! | POST | `/sessions` | `{problem_id \| problem, mode, blind, human_label}` |
//! | GET | `/sessions/{id}` | |
//! | POST | `/sessions/{id}/turns` | `{text}` |
//! | POST | `/sessions/{id}/finalize` | |
//! | GET | `/sessions/{id}/export` | |
//! | POST | `/batches` | `{problem_ids \| sample, mode}` |
//! | GET | `/batches/{id}` | |
//! | GET | `/batches/{id}/outcomes` | |

mod api;
mod error;

use std::collections::{BTreeMap, HashMap};
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Request, State};
use axum::http::{header, HeaderValue, Method};
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::Router;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use discuss_core::config::Config;
use discuss_core::corpus::{load_corpus_with, NLILabel, NLIProblem, Source};
use discuss_core::prompting::{Exemplar, PromptMode};
use discuss_core::runs::load_exemplars;
use discuss_core::session::{EventLog, ScenarioKind, SessionRunner, SessionState};

pub use api::{
    BatchView, CreateBatch, CreateSession, Envelope, InlineProblem, OutcomesView, ProblemView, SampleQuery,
    SampleSpec, TurnBody,
};
pub use error::ApiError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("event log: {0}")]
    EventLog(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One assigned scenario inside a batch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchItem {
    pub session_id: String,
    pub problem_id: String,
    pub planned_kind: ScenarioKind,
    pub kind: ScenarioKind,
    pub argued_label: NLILabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub batch_id: String,
    pub mode: PromptMode,
    pub seed: u64,
    pub items: Vec<BatchItem>,
}

/// Problems addressable by id, in load order.
#[derive(Debug, Clone, Default)]
pub struct ProblemStore {
    ordered: Vec<NLIProblem>,
    index: HashMap<String, usize>,
}

impl ProblemStore {
    pub fn new(problems: Vec<NLIProblem>) -> Self {
        let mut store = Self::default();
        for p in problems {
            if store.index.contains_key(&p.id) {
                log::warn!("duplicate problem id {:?}; keeping the first", p.id);
                continue;
            }
            store.index.insert(p.id.clone(), store.ordered.len());
            store.ordered.push(p);
        }
        store
    }

    pub fn get(&self, id: &str) -> Option<&NLIProblem> {
        self.index.get(id).map(|&i| &self.ordered[i])
    }

    pub fn all(&self) -> &[NLIProblem] {
        &self.ordered
    }

    pub fn len(&self) -> usize {
        self.ordered.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordered.is_empty()
    }
}

type SessionSlot = Arc<tokio::sync::Mutex<SessionState>>;

pub struct AppState {
    pub runner: SessionRunner,
    pub problems: ProblemStore,
    pub exemplars: Vec<Exemplar>,
    pub seed: u64,
    token: Option<String>,
    sessions: RwLock<HashMap<String, SessionSlot>>,
    batches: RwLock<BTreeMap<String, BatchRecord>>,
    /// Session id to (batch id, item position).
    assignments: RwLock<HashMap<String, (String, usize)>>,
    log: Option<Arc<EventLog>>,
    batch_log: Option<PathBuf>,
}

/// Batch definitions live next to the session log.
pub fn batch_log_path(event_log: &Path) -> PathBuf {
    let mut name = event_log.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".batches");
    event_log.with_file_name(name)
}

impl AppState {
    pub fn new(runner: SessionRunner, problems: ProblemStore, exemplars: Vec<Exemplar>, seed: u64) -> Self {
        Self {
            runner,
            problems,
            exemplars,
            seed,
            token: None,
            sessions: RwLock::new(HashMap::new()),
            batches: RwLock::new(BTreeMap::new()),
            assignments: RwLock::new(HashMap::new()),
            log: None,
            batch_log: None,
        }
    }

    pub fn with_token(mut self, token: Option<String>) -> Self {
        self.token = token.filter(|t| !t.is_empty());
        self
    }

    /// Replay `path` into the store, then append new events to it.
    pub fn with_event_log(mut self, path: &Path) -> Result<Self, ServiceError> {
        if path.exists() {
            let replayed = EventLog::replay(path).map_err(|e| ServiceError::EventLog(e.to_string()))?;
            let mut sessions = self.sessions.write();
            for (id, state) in replayed {
                sessions.insert(id, Arc::new(tokio::sync::Mutex::new(state)));
            }
        }
        let batches = batch_log_path(path);
        if batches.exists() {
            let file = std::fs::File::open(&batches)?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<BatchRecord>(&line) {
                    Ok(b) => self.insert_batch(b),
                    Err(e) => log::warn!("skipping batch log line {}: {e}", i + 1),
                }
            }
        }
        self.log = Some(Arc::new(EventLog::open(path).map_err(|e| ServiceError::EventLog(e.to_string()))?));
        self.batch_log = Some(batches);
        Ok(self)
    }

    /// Gateway, problems, and exemplars from a config.
    pub fn from_config(cfg: &Config) -> Result<Self, ServiceError> {
        let gateway = cfg.build_gateway(None).map_err(|e| ServiceError::Config(e.to_string()))?;
        let runner = SessionRunner::new(Arc::new(gateway), cfg.sampling.clone()).with_prompter(cfg.prompter());
        let mut problems = Vec::new();
        for (name, path) in &cfg.data.corpora {
            let source: Source = name.parse().map_err(ServiceError::Config)?;
            let loaded = load_corpus_with(&cfg.resolve(path), source, &cfg.data.fields)
                .map_err(|e| ServiceError::Data(e.to_string()))?;
            problems.extend(loaded.problems);
        }
        if let Some(p) = &cfg.data.discussion_problems {
            let loaded = load_corpus_with(&cfg.resolve(p), Source::SnliDev, &cfg.data.fields)
                .map_err(|e| ServiceError::Data(e.to_string()))?;
            problems.extend(loaded.problems);
        }
        let exemplars = match &cfg.data.exemplars {
            Some(p) => load_exemplars(&cfg.resolve(p)).map_err(|e| ServiceError::Data(e.to_string()))?,
            None => Vec::new(),
        };
        let mut state = Self::new(runner, ProblemStore::new(problems), exemplars, cfg.seed)
            .with_token(cfg.service.token.clone());
        if let Some(log) = &cfg.service.event_log {
            state = state.with_event_log(&cfg.resolve(log))?;
        }
        Ok(state)
    }

    fn slot(&self, id: &str) -> Option<SessionSlot> {
        self.sessions.read().get(id).cloned()
    }

    fn insert_session(&self, state: SessionState) {
        self.sessions.write().insert(state.session_id.clone(), Arc::new(tokio::sync::Mutex::new(state)));
    }

    fn insert_batch(&self, batch: BatchRecord) {
        let mut assignments = self.assignments.write();
        for (i, item) in batch.items.iter().enumerate() {
            assignments.insert(item.session_id.clone(), (batch.batch_id.clone(), i));
        }
        self.batches.write().insert(batch.batch_id.clone(), batch);
    }

    fn argued_label(&self, session_id: &str) -> Option<NLILabel> {
        let (batch, i) = self.assignments.read().get(session_id).cloned()?;
        self.batches.read().get(&batch).map(|b| b.items[i].argued_label)
    }

    fn record_batch(&self, batch: &BatchRecord) -> Result<(), ServiceError> {
        if let Some(path) = &self.batch_log {
            let mut f = OpenOptions::new().create(true).append(true).open(path)?;
            let mut line = serde_json::to_string(batch).expect("batch serializes");
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        Ok(())
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().len()
    }
}

async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|v| v == token);
        if !ok {
            use axum::response::IntoResponse;
            return ApiError::new(axum::http::StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::CONTENT_TYPE, header::AUTHORIZATION]);
    if origins.is_empty() {
        return layer.allow_origin(Any);
    }
    let list: Vec<HeaderValue> = origins.iter().filter_map(|o| HeaderValue::from_str(o).ok()).collect();
    layer.allow_origin(AllowOrigin::list(list))
}

pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Router {
    Router::new()
        .route("/health", get(api::health))
        .route("/problems/sample", get(api::sample_problems))
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}", get(api::get_session))
        .route("/sessions/{id}/turns", post(api::post_turn))
        .route("/sessions/{id}/finalize", post(api::finalize))
        .route("/sessions/{id}/export", get(api::export))
        .route("/batches", post(api::create_batch))
        .route("/batches/{id}", get(api::get_batch))
        .route("/batches/{id}/outcomes", get(api::batch_outcomes))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .layer(cors(cors_origins))
        .with_state(state)
}

/// Serve until Ctrl-C.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr, cors_origins: &[String]) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state, cors_origins))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

/// Build the state from `cfg` and serve on its bind address and port.
pub fn run_blocking(cfg: &Config) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::from_config(cfg)?);
    let addr: SocketAddr = format!("{}:{}", cfg.service.bind, cfg.service.port)
        .parse()
        .map_err(|e| ServiceError::Config(format!("bind address: {e}")))?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(serve(state, addr, &cfg.service.cors_origins))
}
