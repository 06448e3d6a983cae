//! Live human–system discussions.
//!
//! A session moves `predicted → discussing → finalized`. Every operation
//! takes the current state by reference and returns a new one, so a failed
//! call leaves the caller's state untouched and a state can be handed to
//! another worker between turns.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{NLILabel, NLIProblem};
use crate::gateway::{
    parse_label, stable_hash, Backend, BackendError, BackendRequest, Gateway, GatewayError,
    LabelParseError, RawCompletion, SamplingParams,
};
use crate::prompting::{Exemplar, PromptError, PromptMode, Prompter, RenderedPrompt};
use crate::transcript::{deserialize_utterances, DiscussionRecord, Provenance, Speaker, Utterance};

pub const DEFAULT_TURN_BUDGET: usize = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("session is already finalized")]
    SessionFinalized,
    #[error("session has no discussion turns yet")]
    NotDiscussing,
    #[error("utterance text is empty")]
    EmptyUtterance,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Label(#[from] LabelParseError),
    #[error("session cannot be exported: {0}")]
    NotExportable(String),
    #[error("event log: {0}")]
    EventLog(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Predicted,
    Discussing,
    Finalized,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Predicted => "predicted",
            Phase::Discussing => "discussing",
            Phase::Finalized => "finalized",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub problem: NLIProblem,
    pub mode: PromptMode,
    pub exemplars: Vec<Exemplar>,
    pub phase: Phase,
    pub initial_system_label: NLILabel,
    /// Task prompt with the initial prediction appended.
    pub base_prompt: RenderedPrompt,
    #[serde(deserialize_with = "deserialize_utterances")]
    pub history: Vec<Utterance>,
    pub final_label: Option<NLILabel>,
    /// The label the human argues for. Read from the first human utterance
    /// unless declared up front.
    pub human_label: Option<NLILabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
    /// Clients of a blind session never see the gold or initial label.
    #[serde(default)]
    pub blind: bool,
}

impl SessionState {
    /// Declare the human's position explicitly instead of inferring it.
    pub fn with_human_label(mut self, label: NLILabel) -> Self {
        self.human_label = Some(label);
        self
    }

    pub fn turns(&self) -> usize {
        self.history.iter().filter(|u| u.speaker == Speaker::Human).count()
    }

    pub fn is_finalized(&self) -> bool {
        self.phase == Phase::Finalized
    }

    /// The finished discussion as a transcript record.
    pub fn export_record(&self) -> Result<DiscussionRecord, SessionError> {
        let final_label = match (self.phase, self.final_label) {
            (Phase::Finalized, Some(l)) => l,
            _ => return Err(SessionError::NotExportable("session is not finalized".into())),
        };
        let human = self
            .human_label
            .ok_or_else(|| SessionError::NotExportable("human label is unknown".into()))?;
        let record = DiscussionRecord {
            problem_id: self.problem.id.clone(),
            participants: [(Speaker::System, self.initial_system_label), (Speaker::Human, human)]
                .into_iter()
                .collect(),
            final_label,
            utterances: self.history.clone(),
            provenance: Provenance::Session,
            created_at: self.created_at,
            split: None,
        };
        record
            .validate()
            .map_err(|e| SessionError::NotExportable(e.to_string()))?;
        Ok(record)
    }
}

/// Drives sessions against one gateway. Sessions always draw a single
/// sample (index 0) per step.
#[derive(Clone)]
pub struct SessionRunner {
    pub prompter: Prompter,
    pub gateway: Arc<Gateway>,
    pub params: SamplingParams,
    /// Stamp `created_at` on new sessions. Off for reproducible batches.
    pub timestamps: bool,
}

impl SessionRunner {
    pub fn new(gateway: Arc<Gateway>, params: SamplingParams) -> Self {
        Self { prompter: Prompter::default(), gateway, params: params.single(), timestamps: true }
    }

    pub fn with_prompter(mut self, prompter: Prompter) -> Self {
        self.prompter = prompter;
        self
    }

    pub fn without_timestamps(mut self) -> Self {
        self.timestamps = false;
        self
    }

    fn sample(&self, prompt: &RenderedPrompt) -> Result<String, SessionError> {
        Ok(self.gateway.complete_sample(prompt, &self.params, 0)?.text)
    }

    pub fn start_session(
        &self,
        problem: NLIProblem,
        mode: PromptMode,
        exemplars: Vec<Exemplar>,
    ) -> Result<SessionState, SessionError> {
        self.start_session_with_id(uuid::Uuid::new_v4().to_string(), problem, mode, exemplars)
    }

    pub fn start_session_with_id(
        &self,
        session_id: String,
        problem: NLIProblem,
        mode: PromptMode,
        exemplars: Vec<Exemplar>,
    ) -> Result<SessionState, SessionError> {
        let task = self.prompter.render_task_prompt(mode, &exemplars, &problem)?;
        let initial = parse_label(&self.sample(&task)?)?;
        let base_prompt = self.prompter.render_session_base(&task, initial);
        Ok(SessionState {
            session_id,
            problem,
            mode,
            exemplars,
            phase: Phase::Predicted,
            initial_system_label: initial,
            base_prompt,
            history: Vec::new(),
            final_label: None,
            human_label: None,
            created_at: self.timestamps.then(Utc::now),
            blind: false,
        })
    }

    pub fn human_turn(&self, state: &SessionState, text: &str) -> Result<SessionState, SessionError> {
        if state.phase == Phase::Finalized {
            return Err(SessionError::SessionFinalized);
        }
        let text = text.trim();
        if text.is_empty() {
            return Err(SessionError::EmptyUtterance);
        }
        let prompt = self.prompter.render_session_turn(&state.base_prompt, &state.history, text)?;
        let reply = self.sample(&prompt)?;
        let reply = reply.trim();
        if reply.is_empty() {
            return Err(SessionError::Gateway(GatewayError::Backend("empty system reply".into())));
        }
        let mut next = state.clone();
        if next.human_label.is_none() {
            next.human_label = parse_label(text).ok();
        }
        let n = next.history.len();
        next.history.push(Utterance::new(n, Speaker::Human, text));
        next.history.push(Utterance::new(n + 1, Speaker::System, reply));
        next.phase = Phase::Discussing;
        Ok(next)
    }

    pub fn finalize(&self, state: &SessionState) -> Result<SessionState, SessionError> {
        match state.phase {
            Phase::Finalized => return Err(SessionError::SessionFinalized),
            Phase::Predicted => return Err(SessionError::NotDiscussing),
            Phase::Discussing => {}
        }
        let prompt = self.prompter.render_finalize(&state.base_prompt, &state.history)?;
        let label = parse_label(&self.sample(&prompt)?)?;
        let mut next = state.clone();
        next.final_label = Some(label);
        next.phase = Phase::Finalized;
        Ok(next)
    }

    /// Start, discuss until the agent stops or the budget runs out, finalize.
    pub fn run_scenario(
        &self,
        problem: &NLIProblem,
        kind: ScenarioKind,
        agent: &dyn ScenarioAgent,
        mode: PromptMode,
        exemplars: &[Exemplar],
        budget: usize,
    ) -> Result<ScenarioRun, SessionError> {
        let id = format!("scenario-{}", problem.id);
        let mut state = self.start_session_with_id(id, problem.clone(), mode, exemplars.to_vec())?;
        let gold = problem.gold_label;
        let actual = ScenarioKind::for_initial(state.initial_system_label, gold);
        let argued = match actual {
            ScenarioKind::Acceptance => gold,
            ScenarioKind::Objection => agent.wrong_label(problem),
        };
        state.human_label = Some(argued);

        let mut budget_exhausted = false;
        let mut turn = 0;
        loop {
            let Some(text) = agent.utterance(&state, argued, turn) else { break };
            if turn == budget.max(1) {
                budget_exhausted = true;
                break;
            }
            state = self.human_turn(&state, &text)?;
            turn += 1;
        }
        if state.phase == Phase::Predicted {
            // The agent declined to speak; the protocol still needs one turn.
            let opener = opening_utterance(argued);
            state = self.human_turn(&state, &opener)?;
            turn = 1;
        }
        state = self.finalize(&state)?;
        let final_label = state.final_label.expect("finalized");
        let initial = state.initial_system_label;
        let outcome = ScenarioOutcome {
            problem_id: problem.id.clone(),
            kind: actual,
            planned_kind: kind,
            kind_mismatch: actual != kind,
            gold_label: gold,
            argued_label: argued,
            initial_label: initial,
            final_label,
            success: actual.succeeded(initial, final_label, gold),
            turns: turn,
            budget_exhausted,
        };
        Ok(ScenarioRun { outcome, state })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Acceptance,
    Objection,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::Acceptance => "acceptance",
            ScenarioKind::Objection => "objection",
        }
    }

    /// The only kind a problem can run as, given the system's first answer.
    pub fn for_initial(initial: NLILabel, gold: NLILabel) -> Self {
        if initial == gold {
            ScenarioKind::Objection
        } else {
            ScenarioKind::Acceptance
        }
    }

    pub fn succeeded(self, initial: NLILabel, final_label: NLILabel, gold: NLILabel) -> bool {
        match self {
            ScenarioKind::Acceptance => final_label == gold && gold != initial,
            ScenarioKind::Objection => final_label == gold && gold == initial,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub problem_id: String,
    pub kind: ScenarioKind,
    pub planned_kind: ScenarioKind,
    pub kind_mismatch: bool,
    pub gold_label: NLILabel,
    pub argued_label: NLILabel,
    pub initial_label: NLILabel,
    pub final_label: NLILabel,
    pub success: bool,
    pub turns: usize,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub outcome: ScenarioOutcome,
    pub state: SessionState,
}

/// The human side of a scripted scenario.
pub trait ScenarioAgent: Send + Sync {
    /// Next human utterance arguing for `argued`, or `None` to end the
    /// discussion. `turn` counts completed human turns.
    fn utterance(&self, state: &SessionState, argued: NLILabel, turn: usize) -> Option<String>;

    /// The incorrect label to argue in an objection scenario.
    fn wrong_label(&self, problem: &NLIProblem) -> NLILabel;
}

pub fn opening_utterance(label: NLILabel) -> String {
    format!("Let's discuss it more. I think {label}, because the premise supports that reading.")
}

/// Fixed-script agent: an opener in the style of the protocol's first human
/// turn, then restatements until `turns` turns are spent.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    pub turns: usize,
    pub seed: u64,
}

impl Default for ScriptedAgent {
    fn default() -> Self {
        Self { turns: 2, seed: 0 }
    }
}

impl ScriptedAgent {
    pub fn new(turns: usize, seed: u64) -> Self {
        Self { turns, seed }
    }
}

impl ScenarioAgent for ScriptedAgent {
    fn utterance(&self, _state: &SessionState, argued: NLILabel, turn: usize) -> Option<String> {
        if turn >= self.turns {
            return None;
        }
        Some(if turn == 0 {
            opening_utterance(argued)
        } else {
            format!("I still think {argued}. The hypothesis should be read together with the premise.")
        })
    }

    fn wrong_label(&self, problem: &NLIProblem) -> NLILabel {
        let others = problem.gold_label.others();
        others[(stable_hash(self.seed, &[&problem.id]) % 2) as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FinalPolicy {
    /// Answers gold at finalization.
    Oracle,
    /// Adopts the label the human argued last.
    Capitulating,
    /// Keeps its initial label.
    Stubborn,
}

/// Backend with a fixed initial answer per problem and a fixed finalization
/// policy. Problems are recognized by their premise/hypothesis text.
pub struct PolicyMock {
    id: String,
    policy: FinalPolicy,
    table: HashMap<(String, String), (NLILabel, NLILabel)>,
}

impl PolicyMock {
    /// `entries`: each problem with the label the system answers first.
    pub fn new(policy: FinalPolicy, entries: impl IntoIterator<Item = (NLIProblem, NLILabel)>) -> Self {
        let table = entries
            .into_iter()
            .map(|(p, initial)| ((p.premise, p.hypothesis), (initial, p.gold_label)))
            .collect();
        let id = match policy {
            FinalPolicy::Oracle => "policy-oracle",
            FinalPolicy::Capitulating => "policy-capitulating",
            FinalPolicy::Stubborn => "policy-stubborn",
        };
        Self { id: id.to_string(), policy, table }
    }

    fn lookup(&self, text: &str) -> Option<(NLILabel, NLILabel)> {
        let start = text.rfind("Premise: ")? + "Premise: ".len();
        let rest = &text[start..];
        let (premise, after) = rest.split_once("\nHypothesis: ")?;
        let hypothesis = after.split('\n').next()?;
        self.table.get(&(premise.to_string(), hypothesis.to_string())).copied()
    }
}

fn last_human_label(text: &str) -> Option<NLILabel> {
    let start = text.rfind(Speaker::Human.marker())? + Speaker::Human.marker().len();
    let segment = &text[start..];
    let end = segment.find(Speaker::System.marker()).unwrap_or(segment.len());
    parse_label(&segment[..end]).ok()
}

impl Backend for PolicyMock {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &BackendRequest<'_>) -> Result<RawCompletion, BackendError> {
        let text = request.prompt.text.as_str();
        let (initial, gold) = self
            .lookup(text)
            .ok_or_else(|| BackendError::Fatal("policy mock: unknown problem".into()))?;
        let held = |text: &str| match self.policy {
            FinalPolicy::Oracle => gold,
            FinalPolicy::Stubborn => initial,
            FinalPolicy::Capitulating => last_human_label(text).unwrap_or(initial),
        };
        let trimmed = text.trim_end();
        let reply = if trimmed.ends_with(Speaker::System.marker()) {
            format!(" I understand. I think the label is {}.", held(text))
        } else if trimmed.ends_with("Label:") {
            if text.contains(Speaker::Human.marker()) {
                format!(" {}", held(text))
            } else {
                format!(" {initial}")
            }
        } else {
            return Err(BackendError::Fatal("policy mock: unrecognized prompt".into()));
        };
        Ok(RawCompletion::text(reply))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Start,
    Turn,
    Finalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub event: EventKind,
    pub state: SessionState,
}

/// Append-only JSONL log, one full state snapshot per transition.
pub struct EventLog {
    path: PathBuf,
    inner: Mutex<(File, u64)>,
}

impl EventLog {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| SessionError::EventLog(e.to_string()))?;
        }
        let seq = if path.exists() { Self::read_events(&path)?.len() as u64 } else { 0 };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| SessionError::EventLog(e.to_string()))?;
        Ok(Self { path, inner: Mutex::new((file, seq)) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, event: EventKind, state: &SessionState) -> Result<(), SessionError> {
        let mut guard = self.inner.lock();
        let (file, seq) = &mut *guard;
        let entry = SessionEvent { seq: *seq, event, state: state.clone() };
        let mut line = serde_json::to_string(&entry).expect("event serializes");
        line.push('\n');
        file.write_all(line.as_bytes())
            .and_then(|_| file.sync_data())
            .map_err(|e| SessionError::EventLog(e.to_string()))?;
        *seq += 1;
        Ok(())
    }

    /// Every complete event in the file. A torn final line (crash during a
    /// write) is skipped with a warning.
    pub fn read_events(path: &Path) -> Result<Vec<SessionEvent>, SessionError> {
        let file = File::open(path).map_err(|e| SessionError::EventLog(e.to_string()))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<Result<_, _>>()
            .map_err(|e| SessionError::EventLog(e.to_string()))?;
        let last = lines.len();
        let mut events = Vec::new();
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<SessionEvent>(line) {
                Ok(e) => events.push(e),
                Err(e) if i + 1 == last => log::warn!("skipping torn event log tail: {e}"),
                Err(e) => return Err(SessionError::EventLog(format!("line {}: {e}", i + 1))),
            }
        }
        Ok(events)
    }

    /// Latest state of every session in the log.
    pub fn replay(path: &Path) -> Result<BTreeMap<String, SessionState>, SessionError> {
        let mut sessions = BTreeMap::new();
        for e in Self::read_events(path)? {
            sessions.insert(e.state.session_id.clone(), e.state);
        }
        Ok(sessions)
    }
}
