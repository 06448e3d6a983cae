use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use discuss_core::corpus::{filter_three_of_five, sample_problems as draw, NLILabel, NLIProblem, Source};
use discuss_core::harness::{partition_scenarios, scenario_rates, ScenarioRates};
use discuss_core::prompting::PromptMode;
use discuss_core::session::{
    EventKind, Phase, ScenarioAgent, ScenarioKind, ScenarioOutcome, ScriptedAgent, SessionError, SessionState,
};
use discuss_core::transcript::Speaker;

use crate::error::ApiError;
use crate::{AppState, BatchItem, BatchRecord};

type ApiResult<T> = Result<T, ApiError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemView {
    pub id: String,
    pub premise: String,
    pub hypothesis: String,
    /// Absent in blind views.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<NLILabel>,
    pub source: Source,
}

impl ProblemView {
    fn of(p: &NLIProblem, blind: bool) -> Self {
        Self {
            id: p.id.clone(),
            premise: p.premise.clone(),
            hypothesis: p.hypothesis.clone(),
            label: (!blind).then_some(p.gold_label),
            source: p.source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtteranceView {
    pub speaker: Speaker,
    pub text: String,
}

/// What a client sees of a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub session_id: String,
    pub problem: ProblemView,
    pub mode: PromptMode,
    pub phase: Phase,
    pub history: Vec<UtteranceView>,
    /// Absent in blind views.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_system_label: Option<NLILabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_label: Option<NLILabel>,
    pub turns: usize,
    pub blind: bool,
    /// The label an evaluator is asked to argue for, in batch sessions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub argue_for: Option<NLILabel>,
}

impl Envelope {
    pub fn of(state: &SessionState, argue_for: Option<NLILabel>) -> Self {
        Self {
            session_id: state.session_id.clone(),
            problem: ProblemView::of(&state.problem, state.blind),
            mode: state.mode,
            phase: state.phase,
            history: state.history.iter().map(|u| UtteranceView { speaker: u.speaker, text: u.text.clone() }).collect(),
            initial_system_label: (!state.blind).then_some(state.initial_system_label),
            final_label: state.final_label,
            turns: state.turns(),
            blind: state.blind,
            argue_for,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineProblem {
    #[serde(default)]
    pub id: Option<String>,
    pub premise: String,
    pub hypothesis: String,
    pub label: NLILabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub problem_id: Option<String>,
    #[serde(default)]
    pub problem: Option<InlineProblem>,
    #[serde(default)]
    pub mode: Option<PromptMode>,
    #[serde(default)]
    pub blind: bool,
    /// The human's own label, when known before the first turn.
    #[serde(default)]
    pub human_label: Option<NLILabel>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnBody {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleQuery {
    #[serde(default)]
    pub filter: Option<String>,
    pub n: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub corpus: Option<Source>,
    #[serde(default)]
    pub blind: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub n: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub filter: Option<String>,
    #[serde(default)]
    pub corpus: Option<Source>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateBatch {
    #[serde(default)]
    pub problem_ids: Option<Vec<String>>,
    #[serde(default)]
    pub sample: Option<SampleSpec>,
    #[serde(default)]
    pub mode: Option<PromptMode>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSessionView {
    pub session_id: String,
    pub argue_for: NLILabel,
    pub phase: Phase,
}

/// Evaluator view of a batch; scenario kinds are not shown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchView {
    pub batch_id: String,
    pub mode: PromptMode,
    pub total: usize,
    pub finalized: usize,
    pub sessions: Vec<BatchSessionView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomesView {
    pub batch_id: String,
    pub total: usize,
    pub outcomes: Vec<ScenarioOutcome>,
    pub rates: ScenarioRates,
    pub reassigned: Vec<String>,
}

pub async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "backend": state.runner.gateway.backend_id(),
        "problems": state.problems.len(),
        "sessions": state.session_count(),
    }))
}

fn select(state: &AppState, corpus: Option<Source>, filter: Option<&str>) -> ApiResult<Vec<NLIProblem>> {
    let mut pool: Vec<NLIProblem> = match corpus {
        Some(c) => state.problems.all().iter().filter(|p| p.source == c).cloned().collect(),
        None => state.problems.all().to_vec(),
    };
    match filter {
        None => {}
        Some("three-of-five") => pool = filter_three_of_five(&pool).kept,
        Some(other) => return Err(ApiError::bad_request(format!("unknown filter {other:?}"))),
    }
    Ok(pool)
}

fn draw_n(pool: &[NLIProblem], n: usize, seed: u64) -> ApiResult<Vec<NLIProblem>> {
    draw(pool, n, seed).map_err(|e| ApiError::unprocessable("insufficient_problems", e.to_string()))
}

pub async fn sample_problems(
    State(state): State<Arc<AppState>>,
    query: Result<Query<SampleQuery>, axum::extract::rejection::QueryRejection>,
) -> ApiResult<Json<Vec<ProblemView>>> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let pool = select(&state, q.corpus, q.filter.as_deref())?;
    let picked = draw_n(&pool, q.n, q.seed.unwrap_or(state.seed))?;
    Ok(Json(picked.iter().map(|p| ProblemView::of(p, q.blind)).collect()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, SessionError> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map_err(ApiError::from)
}

pub async fn create_session(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<Envelope>)> {
    let req = body(payload)?;
    let problem = match (&req.problem_id, &req.problem) {
        (Some(id), None) => {
            state.problems.get(id).cloned().ok_or_else(|| ApiError::not_found(format!("no problem {id:?}")))?
        }
        (None, Some(p)) => {
            if p.premise.trim().is_empty() || p.hypothesis.trim().is_empty() {
                return Err(ApiError::bad_request("premise and hypothesis must be non-empty"));
            }
            let id = p.id.clone().unwrap_or_else(|| format!("inline-{}", uuid::Uuid::new_v4().simple()));
            NLIProblem::new(id, p.premise.trim(), p.hypothesis.trim(), p.label).with_source(Source::Custom)
        }
        _ => return Err(ApiError::bad_request("give exactly one of problem_id and problem")),
    };
    let mode = req.mode.unwrap_or(PromptMode::FewShotDiscussion);
    let exemplars = if mode == PromptMode::ZeroShot { Vec::new() } else { state.exemplars.clone() };
    if mode != PromptMode::ZeroShot && exemplars.is_empty() {
        return Err(ApiError::bad_request(format!("mode {} needs exemplars; none are configured", mode.as_str())));
    }
    let (blind, human_label) = (req.blind, req.human_label);
    let st = state.clone();
    let session = blocking(move || {
        let mut s = st.runner.start_session(problem, mode, exemplars)?;
        s.blind = blind;
        s.human_label = human_label;
        if let Some(log) = &st.log {
            log.append(EventKind::Start, &s)?;
        }
        Ok(s)
    })
    .await?;
    let env = Envelope::of(&session, None);
    state.insert_session(session);
    Ok((StatusCode::CREATED, Json(env)))
}

pub async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Envelope>> {
    let slot = state.slot(&id).ok_or_else(|| ApiError::not_found(format!("no session {id:?}")))?;
    let s = slot.lock().await;
    Ok(Json(Envelope::of(&s, state.argued_label(&id))))
}

/// Apply one core operation under the session's lock. A session already
/// busy with another request answers 409.
async fn mutate(
    state: Arc<AppState>,
    id: String,
    kind: EventKind,
    op: impl FnOnce(&AppState, &SessionState) -> Result<SessionState, SessionError> + Send + 'static,
) -> ApiResult<Json<Envelope>> {
    let slot = state.slot(&id).ok_or_else(|| ApiError::not_found(format!("no session {id:?}")))?;
    let mut guard = slot
        .try_lock_owned()
        .map_err(|_| ApiError::conflict("busy", "another request is updating this session; retry"))?;
    let current = guard.clone();
    let st = state.clone();
    let next = blocking(move || {
        let next = op(&st, &current)?;
        if let Some(log) = &st.log {
            log.append(kind, &next)?;
        }
        Ok(next)
    })
    .await?;
    *guard = next;
    Ok(Json(Envelope::of(&guard, state.argued_label(&id))))
}

pub async fn post_turn(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<TurnBody>, JsonRejection>,
) -> ApiResult<Json<Envelope>> {
    let text = body(payload)?.text;
    mutate(state, id, EventKind::Turn, move |st, s| st.runner.human_turn(s, &text)).await
}

pub async fn finalize(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Envelope>> {
    mutate(state, id, EventKind::Finalize, |st, s| st.runner.finalize(s)).await
}

pub async fn export(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = state.slot(&id).ok_or_else(|| ApiError::not_found(format!("no session {id:?}")))?;
    let s = slot.lock().await;
    if s.phase != Phase::Finalized {
        return Err(ApiError::conflict("not_finalized", "finalize the session before exporting"));
    }
    let record = s.export_record().map_err(ApiError::from)?;
    Ok(Json(serde_json::to_value(&record).expect("record serializes")))
}

pub async fn create_batch(
    State(state): State<Arc<AppState>>,
    payload: Result<Json<CreateBatch>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<BatchView>)> {
    let req = body(payload)?;
    let seed = req.seed.unwrap_or(state.seed);
    let problems = match (&req.problem_ids, &req.sample) {
        (Some(ids), None) => ids
            .iter()
            .map(|id| state.problems.get(id).cloned().ok_or_else(|| ApiError::not_found(format!("no problem {id:?}"))))
            .collect::<ApiResult<Vec<_>>>()?,
        (None, Some(s)) => {
            let pool = select(&state, s.corpus, s.filter.as_deref())?;
            draw_n(&pool, s.n, s.seed.unwrap_or(seed))?
        }
        _ => return Err(ApiError::bad_request("give exactly one of problem_ids and sample")),
    };
    if problems.is_empty() {
        return Err(ApiError::bad_request("a batch needs at least one problem"));
    }
    let mode = req.mode.unwrap_or(PromptMode::FewShotDiscussion);
    let exemplars = if mode == PromptMode::ZeroShot { Vec::new() } else { state.exemplars.clone() };
    if mode != PromptMode::ZeroShot && exemplars.is_empty() {
        return Err(ApiError::bad_request(format!("mode {} needs exemplars; none are configured", mode.as_str())));
    }
    let batch_id = uuid::Uuid::new_v4().to_string();
    let st = state.clone();
    let bid = batch_id.clone();
    let (sessions, record) = blocking(move || {
        let planned = partition_scenarios(problems.len(), seed);
        let agent = ScriptedAgent::new(0, seed);
        let mut sessions = Vec::new();
        let mut items = Vec::new();
        for (problem, planned_kind) in problems.into_iter().zip(planned) {
            let gold = problem.gold_label;
            let mut s = st.runner.start_session(problem, mode, exemplars.clone())?;
            let kind = ScenarioKind::for_initial(s.initial_system_label, gold);
            let argued_label = match kind {
                ScenarioKind::Acceptance => gold,
                ScenarioKind::Objection => agent.wrong_label(&s.problem),
            };
            s.blind = true;
            s.human_label = Some(argued_label);
            if let Some(log) = &st.log {
                log.append(EventKind::Start, &s)?;
            }
            items.push(BatchItem {
                session_id: s.session_id.clone(),
                problem_id: s.problem.id.clone(),
                planned_kind,
                kind,
                argued_label,
            });
            sessions.push(s);
        }
        Ok((sessions, BatchRecord { batch_id: bid, mode, seed, items }))
    })
    .await?;
    state.record_batch(&record).map_err(|e| ApiError::internal(e.to_string()))?;
    for s in sessions {
        state.insert_session(s);
    }
    state.insert_batch(record);
    let view = batch_view(&state, &batch_id).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn batch_view(state: &AppState, id: &str) -> ApiResult<BatchView> {
    let batch = state.batches.read().get(id).cloned().ok_or_else(|| ApiError::not_found(format!("no batch {id:?}")))?;
    let mut sessions = Vec::new();
    for item in &batch.items {
        let phase = match state.slot(&item.session_id) {
            Some(slot) => slot.lock().await.phase,
            None => return Err(ApiError::internal(format!("batch session {} is missing", item.session_id))),
        };
        sessions.push(BatchSessionView { session_id: item.session_id.clone(), argue_for: item.argued_label, phase });
    }
    Ok(BatchView {
        batch_id: batch.batch_id,
        mode: batch.mode,
        total: sessions.len(),
        finalized: sessions.iter().filter(|s| s.phase == Phase::Finalized).count(),
        sessions,
    })
}

pub async fn get_batch(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<BatchView>> {
    Ok(Json(batch_view(&state, &id).await?))
}

/// Outcomes of the finalized sessions of a batch, with the rates they give.
pub async fn batch_outcomes(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<OutcomesView>> {
    let batch = state.batches.read().get(&id).cloned().ok_or_else(|| ApiError::not_found(format!("no batch {id:?}")))?;
    let mut outcomes = Vec::new();
    let mut reassigned = Vec::new();
    for item in &batch.items {
        if item.kind != item.planned_kind {
            reassigned.push(format!(
                "{}: planned {} ran as {}",
                item.problem_id,
                item.planned_kind.as_str(),
                item.kind.as_str()
            ));
        }
        let Some(slot) = state.slot(&item.session_id) else { continue };
        let s = slot.lock().await;
        let Some(final_label) = s.final_label else { continue };
        let gold = s.problem.gold_label;
        outcomes.push(ScenarioOutcome {
            problem_id: item.problem_id.clone(),
            kind: item.kind,
            planned_kind: item.planned_kind,
            kind_mismatch: item.kind != item.planned_kind,
            gold_label: gold,
            argued_label: item.argued_label,
            initial_label: s.initial_system_label,
            final_label,
            success: item.kind.succeeded(s.initial_system_label, final_label, gold),
            turns: s.turns(),
            budget_exhausted: false,
        });
    }
    let rates = scenario_rates(&outcomes);
    Ok(Json(OutcomesView { batch_id: batch.batch_id, total: batch.items.len(), outcomes, rates, reassigned }))
}
