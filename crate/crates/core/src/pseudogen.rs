//! Machine-generated two-human discussions and fine-tuning export.
//!
//! Fine-tune JSONL, one object per line:
//! `{"premise", "hypothesis", "discussion", "label"}` where `discussion` is
//! the record body in exemplar format. A sibling `<file>.meta.json` carries
//! the reference training hyperparameters; nothing here trains a model.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{NLILabel, NLIProblem};
use crate::gateway::{stable_hash, Gateway, SamplingParams};
use crate::prompting::{PromptError, Prompter};
use crate::transcript::{DiscussionRecord, Provenance, Speaker, TranscriptError, Utterance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PseudoError {
    #[error("no markers")]
    NoMarkers,
    #[error("fewer than two utterances ({0})")]
    FewerThanTwoUtterances(usize),
    #[error("invalid record: {0}")]
    InvalidRecord(#[from] TranscriptError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("no problem with id {0:?}")]
    MissingProblem(String),
    #[error("io: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub h1: NLILabel,
    pub h2: NLILabel,
    #[serde(rename = "final")]
    pub final_label: NLILabel,
}

/// A fair coin picks which human holds gold; the other holds one of the two
/// wrong labels, uniformly.
pub fn assign_roles(gold: NLILabel, seed: u64) -> RoleAssignment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h1_gold = rng.random_bool(0.5);
    let wrong = gold.others()[rng.random_range(0..2)];
    let (h1, h2) = if h1_gold { (gold, wrong) } else { (wrong, gold) };
    RoleAssignment { h1, h2, final_label: gold }
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"Human([12]):").expect("valid regex"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDiscussion {
    pub record: DiscussionRecord,
    pub warnings: Vec<String>,
}

/// Split generated text on `Human1:`/`Human2:` markers into a record.
pub fn parse_discussion(
    text: &str,
    assignment: RoleAssignment,
    problem_id: &str,
) -> Result<ParsedDiscussion, PseudoError> {
    let marks: Vec<_> = marker_re().captures_iter(text).collect();
    if marks.is_empty() {
        return Err(PseudoError::NoMarkers);
    }
    let mut warnings = Vec::new();
    let first = marks[0].get(0).expect("whole match").start();
    if !text[..first].trim().is_empty() {
        warnings.push(format!("discarded text before first marker: {:?}", text[..first].trim()));
    }
    let mut utterances = Vec::new();
    for (i, cap) in marks.iter().enumerate() {
        let whole = cap.get(0).expect("whole match");
        let end = marks.get(i + 1).map_or(text.len(), |m| m.get(0).expect("whole match").start());
        let body = text[whole.end()..end].trim();
        if body.is_empty() {
            warnings.push(format!("dropped empty utterance at marker {i}"));
            continue;
        }
        let speaker = if &cap[1] == "1" { Speaker::Human1 } else { Speaker::Human2 };
        utterances.push(Utterance::new(utterances.len(), speaker, body));
    }
    if utterances.len() < 2 {
        return Err(PseudoError::FewerThanTwoUtterances(utterances.len()));
    }
    let record = DiscussionRecord {
        problem_id: problem_id.to_string(),
        participants: [(Speaker::Human1, assignment.h1), (Speaker::Human2, assignment.h2)]
            .into_iter()
            .collect(),
        final_label: assignment.final_label,
        utterances,
        provenance: Provenance::Pseudo,
        created_at: None,
        split: None,
    };
    record.validate()?;
    Ok(ParsedDiscussion { record, warnings })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub problem_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStats {
    pub requested: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub mean_utterances: Option<f64>,
    pub reject_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoBatch {
    pub records: Vec<DiscussionRecord>,
    pub rejects: Vec<Reject>,
    pub warnings: Vec<String>,
    pub stats: BatchStats,
}

pub fn mean_utterances(records: &[DiscussionRecord]) -> Option<f64> {
    (!records.is_empty())
        .then(|| records.iter().map(|r| r.utterances.len()).sum::<usize>() as f64 / records.len() as f64)
}

enum Attempt {
    Accepted(ParsedDiscussion),
    Rejected(String),
}

fn generate_one(
    gateway: &Gateway,
    prompter: &Prompter,
    problem: &NLIProblem,
    params: &SamplingParams,
    seed: u64,
) -> Attempt {
    let roles = assign_roles(problem.gold_label, stable_hash(seed, &[&problem.id]));
    let prompt = match prompter.render_pseudo_gen(problem, roles.h1, roles.h2, roles.final_label) {
        Ok(p) => p,
        Err(e) => return Attempt::Rejected(e.to_string()),
    };
    let mut reason = String::new();
    // Sample index 1 is the retry, so a cached bad answer is not replayed.
    for sample in 0..2 {
        match gateway.complete_sample(&prompt, params, sample) {
            Ok(c) => match parse_discussion(&c.text, roles, &problem.id) {
                Ok(parsed) => return Attempt::Accepted(parsed),
                Err(e) => reason = e.to_string(),
            },
            Err(e) => reason = e.to_string(),
        }
    }
    Attempt::Rejected(reason)
}

/// One generation per problem, retried once; every problem ends up either
/// accepted or rejected with a reason.
pub fn generate_batch(
    gateway: &Gateway,
    prompter: &Prompter,
    problems: &[NLIProblem],
    params: &SamplingParams,
    seed: u64,
) -> PseudoBatch {
    let params = SamplingParams { seed: params.seed.or(Some(seed)), ..params.single() };
    let attempts: Vec<Attempt> = problems
        .par_iter()
        .map(|p| generate_one(gateway, prompter, p, &params, seed))
        .collect();
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut warnings = Vec::new();
    for (p, a) in problems.iter().zip(attempts) {
        match a {
            Attempt::Accepted(parsed) => {
                warnings.extend(parsed.warnings.into_iter().map(|w| format!("{}: {w}", p.id)));
                records.push(parsed.record);
            }
            Attempt::Rejected(reason) => rejects.push(Reject { problem_id: p.id.clone(), reason }),
        }
    }
    let stats = BatchStats {
        requested: problems.len(),
        accepted: records.len(),
        rejected: rejects.len(),
        mean_utterances: mean_utterances(&records),
        reject_rate: if problems.is_empty() { 0.0 } else { rejects.len() as f64 / problems.len() as f64 },
    };
    PseudoBatch { records, rejects, warnings, stats }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneLine {
    pub premise: String,
    pub hypothesis: String,
    pub discussion: String,
    pub label: NLILabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceHyperparameters {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for ReferenceHyperparameters {
    fn default() -> Self {
        Self { batch_size: 128, learning_rate: 2e-5, epochs: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneMeta {
    pub records: usize,
    pub fields: Vec<String>,
    /// Reference values only; no training happens here.
    pub reference_hyperparameters: ReferenceHyperparameters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub path: PathBuf,
    pub meta_path: PathBuf,
    pub lines: usize,
}

pub fn meta_path_for(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

pub fn finetune_lines(
    records: &[DiscussionRecord],
    problems: &HashMap<String, NLIProblem>,
    prompter: &Prompter,
) -> Result<Vec<FinetuneLine>, PseudoError> {
    records
        .iter()
        .map(|r| {
            let p = problems.get(&r.problem_id).ok_or_else(|| PseudoError::MissingProblem(r.problem_id.clone()))?;
            Ok(FinetuneLine {
                premise: p.premise.clone(),
                hypothesis: p.hypothesis.clone(),
                discussion: prompter.render_discussion(r),
                label: r.final_label,
            })
        })
        .collect()
}

pub fn finetune_jsonl(lines: &[FinetuneLine]) -> String {
    let mut body = String::new();
    for l in lines {
        body.push_str(&serde_json::to_string(l).expect("line serializes"));
        body.push('\n');
    }
    body
}

pub fn finetune_meta_json(records: usize) -> String {
    let meta = FinetuneMeta {
        records,
        fields: ["premise", "hypothesis", "discussion", "label"].map(String::from).to_vec(),
        reference_hyperparameters: ReferenceHyperparameters::default(),
    };
    serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n"
}

pub fn export_finetune(
    records: &[DiscussionRecord],
    problems: &HashMap<String, NLIProblem>,
    prompter: &Prompter,
    path: &Path,
) -> Result<ExportSummary, PseudoError> {
    for r in records {
        r.validate()?;
    }
    let lines = finetune_lines(records, problems, prompter)?;
    let io = |e: std::io::Error| PseudoError::Io(e.to_string());
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io)?;
    }
    fs::write(path, finetune_jsonl(&lines)).map_err(io)?;
    let meta_path = meta_path_for(path);
    fs::write(&meta_path, finetune_meta_json(lines.len())).map_err(io)?;
    Ok(ExportSummary { path: path.to_path_buf(), meta_path, lines: lines.len() })
}

pub fn read_finetune(path: &Path) -> Result<Vec<FinetuneLine>, PseudoError> {
    let text = fs::read_to_string(path).map_err(|e| PseudoError::Io(e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| PseudoError::Io(format!("line {}: {e}", i + 1))))
        .collect()
}
