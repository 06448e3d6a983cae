//! Discussion records: the shared data model for human-human transcripts,
//! pseudo-discussions, and live human-system sessions.
//!
//! JSON schema of one record:
//!
//! ```json
//! {
//!   "problem_id": "snli-42",
//!   "participants": {"human1": "neutral", "human2": "contradiction"},
//!   "final_label": "contradiction",
//!   "utterances": [{"speaker": "human1", "text": "...", "tag": "supportive"}],
//!   "provenance": "human",
//!   "created_at": "2026-01-01T00:00:00Z",
//!   "split": "validation"
//! }
//! ```
//!
//! `tag`, `created_at`, and `split` are optional. Collections are stored as
//! JSONL, one record per line.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::corpus::{NLILabel, Split};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("schema error at {field}: {reason}")]
    SchemaError { field: String, reason: String },
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("utterance index {index} out of range for {len} utterances")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Human1,
    Human2,
    Human,
    System,
}

impl Speaker {
    pub const ALL: [Speaker; 4] = [Speaker::Human1, Speaker::Human2, Speaker::Human, Speaker::System];

    /// The prefix written in front of an utterance, e.g. `Human1:`.
    pub fn marker(self) -> &'static str {
        match self {
            Speaker::Human1 => "Human1:",
            Speaker::Human2 => "Human2:",
            Speaker::Human => "Human:",
            Speaker::System => "System:",
        }
    }

    /// Speakers that take part in live sessions rather than transcripts.
    pub fn is_session_speaker(self) -> bool {
        matches!(self, Speaker::Human | Speaker::System)
    }

    /// The other speaker of the same pair.
    pub fn counterpart(self) -> Speaker {
        match self {
            Speaker::Human1 => Speaker::Human2,
            Speaker::Human2 => Speaker::Human1,
            Speaker::Human => Speaker::System,
            Speaker::System => Speaker::Human,
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::Human1 => "human1",
            Speaker::Human2 => "human2",
            Speaker::Human => "human",
            Speaker::System => "system",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContributionTag {
    Supportive,
    Unsupportive,
    Irrelevant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Human,
    Pseudo,
    Session,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    /// Position in the parent list; not serialized, restored on load.
    #[serde(skip)]
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<ContributionTag>,
}

impl Utterance {
    pub fn new(index: usize, speaker: Speaker, text: impl Into<String>) -> Self {
        Self { index, speaker, text: text.into(), tag: None }
    }

    pub fn tagged(mut self, tag: ContributionTag) -> Self {
        self.tag = Some(tag);
        self
    }

    /// `"<Marker> <text>"`.
    pub fn render(&self) -> String {
        format!("{} {}", self.speaker.marker(), self.text)
    }
}

/// Deserialize a list of utterances and number them by position.
pub fn deserialize_utterances<'de, D>(d: D) -> Result<Vec<Utterance>, D::Error>
where
    D: Deserializer<'de>,
{
    let mut v = Vec::<Utterance>::deserialize(d)?;
    reindex(&mut v);
    Ok(v)
}

pub fn reindex(utterances: &mut [Utterance]) {
    for (i, u) in utterances.iter_mut().enumerate() {
        u.index = i;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRecord")]
pub struct DiscussionRecord {
    pub problem_id: String,
    /// The two initial, disagreeing labels.
    pub participants: BTreeMap<Speaker, NLILabel>,
    pub final_label: NLILabel,
    pub utterances: Vec<Utterance>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    problem_id: String,
    participants: BTreeMap<Speaker, NLILabel>,
    final_label: NLILabel,
    #[serde(deserialize_with = "deserialize_utterances")]
    utterances: Vec<Utterance>,
    provenance: Provenance,
    #[serde(default)]
    created_at: Option<DateTime<Utc>>,
    #[serde(default)]
    split: Option<Split>,
}

impl TryFrom<RawRecord> for DiscussionRecord {
    type Error = TranscriptError;

    fn try_from(raw: RawRecord) -> Result<Self, Self::Error> {
        let record = DiscussionRecord {
            problem_id: raw.problem_id,
            participants: raw.participants,
            final_label: raw.final_label,
            utterances: raw.utterances,
            provenance: raw.provenance,
            created_at: raw.created_at,
            split: raw.split,
        };
        record.validate()?;
        Ok(record)
    }
}

fn violation(name: &str) -> TranscriptError {
    TranscriptError::InvariantViolation(name.to_string())
}

impl DiscussionRecord {
    /// Check every record invariant. Tags are not required here.
    pub fn validate(&self) -> Result<(), TranscriptError> {
        if self.problem_id.trim().is_empty() {
            return Err(violation("problem_id must be non-empty"));
        }
        if self.participants.len() != 2 {
            return Err(violation("participants must have exactly two entries"));
        }
        let labels: Vec<NLILabel> = self.participants.values().copied().collect();
        if labels[0] == labels[1] {
            return Err(violation("labels must disagree"));
        }
        if !labels.contains(&self.final_label) {
            return Err(violation("final label must be a participant label"));
        }
        if self.utterances.is_empty() {
            return Err(violation("utterances must be non-empty"));
        }
        let session = self.provenance == Provenance::Session;
        if self.participants.keys().any(|s| s.is_session_speaker() != session) {
            return Err(violation("speakers must match provenance"));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            if u.index != i {
                return Err(violation("utterance index must equal its position"));
            }
            if !self.participants.contains_key(&u.speaker) {
                return Err(violation("utterance speaker must be a participant"));
            }
            let text = u.text.trim_start();
            if text.is_empty() {
                return Err(violation("utterance text must be non-empty"));
            }
            if Speaker::ALL.iter().any(|s| text.starts_with(s.marker())) {
                return Err(violation("utterance text must not start with a speaker marker"));
            }
        }
        Ok(())
    }

    /// Participant labels ordered by speaker (human1 before human2, human
    /// before system).
    pub fn label_pair(&self) -> (NLILabel, NLILabel) {
        let mut it = self.participants.values().copied();
        let a = it.next().expect("validated record has two participants");
        let b = it.next().expect("validated record has two participants");
        (a, b)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    /// `"Human1: ... Human2: ..."` over all utterances, single-space joined.
    pub fn render_body(&self) -> String {
        render_utterances(&self.utterances)
    }
}

pub fn render_utterances(utterances: &[Utterance]) -> String {
    utterances
        .iter()
        .map(Utterance::render)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Parse and validate one record.
pub fn parse_record(json: &str) -> Result<DiscussionRecord, TranscriptError> {
    let de = &mut serde_json::Deserializer::from_str(json);
    let raw: RawRecord = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        TranscriptError::SchemaError {
            field: if path.is_empty() || path == "." { "<record>".into() } else { path },
            reason: e.into_inner().to_string(),
        }
    })?;
    DiscussionRecord::try_from(raw)
}

pub fn parse_records_jsonl(text: &str) -> Result<Vec<DiscussionRecord>, TranscriptError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(line).map_err(|e| match e {
            TranscriptError::SchemaError { field, reason } => TranscriptError::SchemaError {
                field: format!("line {}: {field}", i + 1),
                reason,
            },
            TranscriptError::InvariantViolation(n) => {
                TranscriptError::InvariantViolation(format!("line {}: {n}", i + 1))
            }
            other => other,
        })?);
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<DiscussionRecord>, TranscriptError> {
    let text = fs::read_to_string(path)
        .map_err(|e| TranscriptError::Io(format!("{}: {e}", path.display())))?;
    parse_records_jsonl(&text)
}

pub fn records_to_jsonl(records: &[DiscussionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_json());
        out.push('\n');
    }
    out
}

pub fn write_records(path: &Path, records: &[DiscussionRecord]) -> Result<(), TranscriptError> {
    fs::write(path, records_to_jsonl(records))
        .map_err(|e| TranscriptError::Io(format!("{}: {e}", path.display())))
}

/// The discussion up to (not including) utterance `k`, followed by the
/// speaker marker of utterance `k`.
pub fn context_prefix(record: &DiscussionRecord, k: usize) -> Result<String, TranscriptError> {
    let len = record.utterances.len();
    if k >= len {
        return Err(TranscriptError::IndexOutOfRange { index: k, len });
    }
    let marker = record.utterances[k].speaker.marker();
    if k == 0 {
        return Ok(marker.to_string());
    }
    Ok(format!("{} {marker}", render_utterances(&record.utterances[..k])))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCounts {
    pub supportive: usize,
    pub unsupportive: usize,
    pub irrelevant: usize,
}

impl TagCounts {
    pub fn total(&self) -> usize {
        self.supportive + self.unsupportive + self.irrelevant
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub records: usize,
    pub utterances: usize,
    pub mean_utterances: Option<f64>,
    pub tags: TagCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub records: usize,
    pub mean_utterances: Option<f64>,
    /// Keyed by split name; records without a split count as `unassigned`.
    pub per_split: BTreeMap<String, SplitStats>,
    pub tags: TagCounts,
    pub untagged: usize,
}

pub fn corpus_stats(records: &[DiscussionRecord]) -> StatsReport {
    let mut report = StatsReport { records: records.len(), ..Default::default() };
    let mut total_utts = 0usize;
    for r in records {
        let key = r.split.unwrap_or(Split::Unassigned).as_str().to_string();
        let split = report.per_split.entry(key).or_default();
        split.records += 1;
        split.utterances += r.utterances.len();
        total_utts += r.utterances.len();
        for u in &r.utterances {
            let counts = [&mut report.tags, &mut split.tags];
            match u.tag {
                Some(tag) => {
                    for c in counts {
                        match tag {
                            ContributionTag::Supportive => c.supportive += 1,
                            ContributionTag::Unsupportive => c.unsupportive += 1,
                            ContributionTag::Irrelevant => c.irrelevant += 1,
                        }
                    }
                }
                None => report.untagged += 1,
            }
        }
    }
    for s in report.per_split.values_mut() {
        s.mean_utterances = Some(s.utterances as f64 / s.records as f64);
    }
    if !records.is_empty() {
        report.mean_utterances = Some(total_utts as f64 / records.len() as f64);
    }
    report
}
