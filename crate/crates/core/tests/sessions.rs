use std::io::Write;
use std::sync::Arc;

use discuss_core::corpus::{NLILabel, NLIProblem};
use discuss_core::gateway::{Gateway, HeuristicMock, SamplingParams};
use discuss_core::prompting::PromptMode;
use discuss_core::session::{
    EventKind, EventLog, FinalPolicy, Phase, PolicyMock, ScenarioAgent, ScenarioKind, ScriptedAgent, SessionError,
    SessionRunner,
};

use NLILabel::*;

fn problem() -> NLIProblem {
    NLIProblem::new("barn", "A woman is cooking in a barn.", "A woman is making food in a kitchen.", Contradiction)
}

fn runner(policy: FinalPolicy, initial: NLILabel) -> SessionRunner {
    let mock = PolicyMock::new(policy, [(problem(), initial)]);
    SessionRunner::new(Arc::new(Gateway::new(Arc::new(mock))), SamplingParams::default()).without_timestamps()
}

#[test]
fn phases_advance_in_order() {
    let r = runner(FinalPolicy::Capitulating, Neutral);
    let s = r.start_session(problem(), PromptMode::ZeroShot, Vec::new()).unwrap();
    assert_eq!((s.phase, s.initial_system_label), (Phase::Predicted, Neutral));
    assert!(matches!(r.finalize(&s), Err(SessionError::NotDiscussing)));
    let s = r.human_turn(&s, "I think contradiction, because a barn is not a kitchen.").unwrap();
    assert_eq!(s.phase, Phase::Discussing);
    assert_eq!(s.human_label, Some(Contradiction));
    let s = r.finalize(&s).unwrap();
    assert_eq!(s.final_label, Some(Contradiction));
    assert!(matches!(r.human_turn(&s, "again"), Err(SessionError::SessionFinalized)));
    let record = s.export_record().unwrap();
    assert_eq!(record.utterances.len(), 2);
}

#[test]
fn scenario_kind_follows_first_answer() {
    let agent = ScriptedAgent::new(2, 1);
    let r = runner(FinalPolicy::Stubborn, Contradiction);
    let run = r.run_scenario(&problem(), ScenarioKind::Acceptance, &agent, PromptMode::ZeroShot, &[], 8).unwrap();
    assert_eq!(run.outcome.kind, ScenarioKind::Objection);
    assert!(run.outcome.kind_mismatch);
    assert_ne!(run.outcome.argued_label, Contradiction);
    assert_eq!(run.outcome.argued_label, agent.wrong_label(&problem()));
    assert!(run.outcome.success);
    assert_eq!(run.outcome.turns, 2);
}

#[test]
fn budget_caps_turns() {
    let r = runner(FinalPolicy::Oracle, Neutral);
    let agent = ScriptedAgent::new(10, 1);
    let run = r.run_scenario(&problem(), ScenarioKind::Acceptance, &agent, PromptMode::ZeroShot, &[], 3).unwrap();
    assert_eq!(run.outcome.turns, 3);
    assert!(run.outcome.budget_exhausted);
}

#[test]
fn event_log_replays_latest_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log/events.jsonl");
    let r = SessionRunner::new(Arc::new(Gateway::new(Arc::new(HeuristicMock::new(1)))), SamplingParams::default());
    let log = EventLog::open(&path).unwrap();
    let s = r.start_session(problem(), PromptMode::ZeroShot, Vec::new()).unwrap();
    log.append(EventKind::Start, &s).unwrap();
    let s = r.human_turn(&s, "I think neutral.").unwrap();
    log.append(EventKind::Turn, &s).unwrap();
    let other = r.start_session(problem(), PromptMode::ZeroShot, Vec::new()).unwrap();
    log.append(EventKind::Start, &other).unwrap();
    drop(log);

    // A crash mid-write leaves a torn last line.
    std::fs::OpenOptions::new().append(true).open(&path).unwrap().write_all(b"{\"seq\": 3, \"ev").unwrap();
    let replayed = EventLog::replay(&path).unwrap();
    assert_eq!(replayed.len(), 2);
    assert_eq!(replayed[&s.session_id], s);
    assert_eq!(replayed[&other.session_id], other);
}
