//! NLI corpus ingestion, majority labels, the three-of-five agreement
//! filter, and seeded split assignment.
//!
//! Input is JSONL with one problem per line. Field names vary between SNLI
//! and ANLI dumps, so each canonical field is looked up through a
//! [`FieldMap`] of candidate keys.
//!
//! Label tokens go through a fixed alias table:
//!
//! | token(s)                                 | label         |
//! |------------------------------------------|---------------|
//! | `entailment`, `e`, `entail`, `0`         | entailment    |
//! | `neutral`, `n`, `1`                      | neutral       |
//! | `contradiction`, `c`, `contradict`, `2`  | contradiction |
//! | `-`, empty string                        | no consensus  |
//!
//! Matching is case-insensitive after trimming. Integer labels follow the
//! Hugging Face `snli`/`anli` convention.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus file not found: {0}")]
    FileNotFound(String),
    #[error("i/o error reading corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("unknown label token {0:?}")]
    UnknownLabel(String),
    #[error("duplicate problem id {0:?}")]
    DuplicateId(String),
    #[error("majority label of an empty label list")]
    EmptyInput,
    #[error("need {needed} problems for the requested splits, only {available} available")]
    InsufficientProblems { needed: usize, available: usize },
}

/// The three NLI classes. Serialized lowercase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NLILabel {
    Entailment,
    Contradiction,
    Neutral,
}

impl NLILabel {
    pub const ALL: [NLILabel; 3] = [
        NLILabel::Entailment,
        NLILabel::Contradiction,
        NLILabel::Neutral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NLILabel::Entailment => "entailment",
            NLILabel::Contradiction => "contradiction",
            NLILabel::Neutral => "neutral",
        }
    }

    /// The two labels different from `self`, in canonical order.
    pub fn others(self) -> [NLILabel; 2] {
        let mut out = [self; 2];
        let mut i = 0;
        for l in Self::ALL {
            if l != self {
                out[i] = l;
                i += 1;
            }
        }
        out
    }

    /// Resolve a raw label token through the alias table. `Ok(None)` is the
    /// no-consensus marker.
    pub fn from_alias(token: &str) -> Result<Option<NLILabel>, CorpusError> {
        let t = token.trim().to_ascii_lowercase();
        match t.as_str() {
            "entailment" | "e" | "entail" | "0" => Ok(Some(NLILabel::Entailment)),
            "neutral" | "n" | "1" => Ok(Some(NLILabel::Neutral)),
            "contradiction" | "c" | "contradict" | "2" => Ok(Some(NLILabel::Contradiction)),
            "-" | "" => Ok(None),
            _ => Err(CorpusError::UnknownLabel(token.to_string())),
        }
    }
}

impl fmt::Display for NLILabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NLILabel {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NLILabel::from_alias(s)?.ok_or_else(|| CorpusError::UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "snli-dev")]
    SnliDev,
    #[serde(rename = "snli-test")]
    SnliTest,
    #[serde(rename = "anli-r1")]
    AnliR1,
    #[serde(rename = "anli-r2")]
    AnliR2,
    #[serde(rename = "anli-r3")]
    AnliR3,
    #[serde(rename = "custom")]
    Custom,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::SnliDev => "snli-dev",
            Source::SnliTest => "snli-test",
            Source::AnliR1 => "anli-r1",
            Source::AnliR2 => "anli-r2",
            Source::AnliR3 => "anli-r3",
            Source::Custom => "custom",
        }
    }

    /// Report column a source is accounted under. Both SNLI splits share one
    /// column, the ANLI rounds get one each.
    pub fn column(self) -> &'static str {
        match self {
            Source::SnliDev | Source::SnliTest => "SNLI",
            Source::AnliR1 => "R1",
            Source::AnliR2 => "R2",
            Source::AnliR3 => "R3",
            Source::Custom => "custom",
        }
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "snli-dev" => Ok(Source::SnliDev),
            "snli-test" => Ok(Source::SnliTest),
            "anli-r1" => Ok(Source::AnliR1),
            "anli-r2" => Ok(Source::AnliR2),
            "anli-r3" => Ok(Source::AnliR3),
            "custom" => Ok(Source::Custom),
            other => Err(format!("unknown corpus source {other:?}")),
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Prompt,
    Validation,
    Evaluation,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Prompt => "prompt",
            Split::Validation => "validation",
            Split::Evaluation => "evaluation",
            Split::Unassigned => "unassigned",
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prompt" => Ok(Split::Prompt),
            "validation" => Ok(Split::Validation),
            "evaluation" => Ok(Split::Evaluation),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NLIProblem {
    pub id: String,
    pub premise: String,
    pub hypothesis: String,
    #[serde(rename = "label")]
    pub gold_label: NLILabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator_labels: Option<Vec<NLILabel>>,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl NLIProblem {
    pub fn new(
        id: impl Into<String>,
        premise: impl Into<String>,
        hypothesis: impl Into<String>,
        gold_label: NLILabel,
    ) -> Self {
        Self {
            id: id.into(),
            premise: premise.into(),
            hypothesis: hypothesis.into(),
            gold_label,
            annotator_labels: None,
            source: Source::Custom,
            split: None,
        }
    }

    pub fn with_annotators(mut self, labels: Vec<NLILabel>) -> Self {
        self.annotator_labels = Some(labels);
        self
    }

    pub fn with_source(mut self, source: Source) -> Self {
        self.source = source;
        self
    }

    pub fn distribution(&self) -> Option<LabelDistribution> {
        self.annotator_labels
            .as_deref()
            .map(LabelDistribution::from_labels)
    }
}

/// Per-label annotator counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub entailment: usize,
    pub contradiction: usize,
    pub neutral: usize,
}

impl LabelDistribution {
    pub fn from_labels(labels: &[NLILabel]) -> Self {
        let mut d = Self::default();
        for l in labels {
            *d.count_mut(*l) += 1;
        }
        d
    }

    pub fn count(&self, label: NLILabel) -> usize {
        match label {
            NLILabel::Entailment => self.entailment,
            NLILabel::Contradiction => self.contradiction,
            NLILabel::Neutral => self.neutral,
        }
    }

    fn count_mut(&mut self, label: NLILabel) -> &mut usize {
        match label {
            NLILabel::Entailment => &mut self.entailment,
            NLILabel::Contradiction => &mut self.contradiction,
            NLILabel::Neutral => &mut self.neutral,
        }
    }

    pub fn total(&self) -> usize {
        self.entailment + self.contradiction + self.neutral
    }

    pub fn max_count(&self) -> usize {
        self.entailment.max(self.contradiction).max(self.neutral)
    }
}

/// Candidate JSON keys for each canonical field, tried in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMap {
    pub id: Vec<String>,
    pub premise: Vec<String>,
    pub hypothesis: Vec<String>,
    pub label: Vec<String>,
    pub annotator_labels: Vec<String>,
    pub split: Vec<String>,
}

impl Default for FieldMap {
    fn default() -> Self {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            id: v(&["id", "pairID", "uid"]),
            premise: v(&["premise", "sentence1", "context"]),
            hypothesis: v(&["hypothesis", "sentence2"]),
            label: v(&["label", "gold_label"]),
            annotator_labels: v(&["annotator_labels"]),
            split: v(&["split"]),
        }
    }
}

fn lookup<'a>(obj: &'a serde_json::Map<String, Value>, keys: &[String]) -> Option<&'a Value> {
    keys.iter().find_map(|k| obj.get(k))
}

fn label_token(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Result of [`load_corpus`]: the problems plus bookkeeping for lines that
/// were dropped or altered.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadedCorpus {
    pub problems: Vec<NLIProblem>,
    /// Lines whose gold label is the no-consensus marker.
    pub skipped_no_consensus: usize,
    /// Problems whose annotator list did not hold exactly five labels; the
    /// list is dropped, the problem kept.
    pub nonstandard_annotations: usize,
}

pub fn load_corpus(path: &Path, source: Source) -> Result<LoadedCorpus, CorpusError> {
    load_corpus_with(path, source, &FieldMap::default())
}

pub fn load_corpus_with(
    path: &Path,
    source: Source,
    fields: &FieldMap,
) -> Result<LoadedCorpus, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::FileNotFound(path.display().to_string()));
    }
    let text = fs::read_to_string(path)?;
    parse_corpus(&text, source, fields)
}

/// Parse JSONL corpus text. Blank lines are ignored; line numbers are 1-based.
pub fn parse_corpus(
    text: &str,
    source: Source,
    fields: &FieldMap,
) -> Result<LoadedCorpus, CorpusError> {
    let mut out = LoadedCorpus::default();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |reason: &str| CorpusError::MalformedLine {
            line: line_no,
            reason: reason.to_string(),
        };
        let value: Value =
            serde_json::from_str(raw).map_err(|e| malformed(&e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| malformed("not a JSON object"))?;

        let text_field = |keys: &[String], name: &str| -> Result<String, CorpusError> {
            let v = lookup(obj, keys).ok_or_else(|| malformed(&format!("missing {name}")))?;
            let s = v
                .as_str()
                .ok_or_else(|| malformed(&format!("{name} is not a string")))?
                .trim();
            if s.is_empty() {
                return Err(malformed(&format!("{name} is empty")));
            }
            Ok(s.to_string())
        };
        let premise = text_field(&fields.premise, "premise")?;
        let hypothesis = text_field(&fields.hypothesis, "hypothesis")?;

        let label_value = lookup(obj, &fields.label).ok_or_else(|| malformed("missing label"))?;
        let token = label_token(label_value).ok_or_else(|| malformed("label is not a string"))?;
        let Some(gold_label) = NLILabel::from_alias(&token)? else {
            out.skipped_no_consensus += 1;
            continue;
        };

        let id = match lookup(obj, &fields.id) {
            Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
            Some(Value::Number(n)) => n.to_string(),
            Some(_) => return Err(malformed("id is not a non-empty string")),
            None => format!("{source}-{line_no}"),
        };
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id));
        }

        let mut annotator_labels = None;
        if let Some(v) = lookup(obj, &fields.annotator_labels) {
            let arr = v
                .as_array()
                .ok_or_else(|| malformed("annotator_labels is not an array"))?;
            let mut labels = Vec::with_capacity(arr.len());
            let mut complete = true;
            for item in arr {
                let tok = label_token(item)
                    .ok_or_else(|| malformed("annotator label is not a string"))?;
                match NLILabel::from_alias(&tok)? {
                    Some(l) => labels.push(l),
                    None => complete = false,
                }
            }
            if complete && labels.len() == 5 {
                annotator_labels = Some(labels);
            } else {
                out.nonstandard_annotations += 1;
            }
        }

        let split = match lookup(obj, &fields.split) {
            Some(Value::String(s)) => Some(Split::from_str(s).map_err(|e| malformed(&e))?),
            Some(Value::Null) | None => None,
            Some(_) => return Err(malformed("split is not a string")),
        };

        out.problems.push(NLIProblem {
            id,
            premise,
            hypothesis,
            gold_label,
            annotator_labels,
            source,
            split,
        });
    }
    Ok(out)
}

/// Serialize problems to the canonical JSONL schema (one object per line,
/// trailing newline after each).
pub fn to_jsonl(problems: &[NLIProblem]) -> String {
    let mut out = String::new();
    for p in problems {
        out.push_str(&serde_json::to_string(p).expect("problem serializes"));
        out.push('\n');
    }
    out
}

pub fn write_corpus(path: &Path, problems: &[NLIProblem]) -> Result<(), CorpusError> {
    fs::write(path, to_jsonl(problems))?;
    Ok(())
}

/// The strictly most frequent label, or `None` when the maximum is shared.
pub fn majority_label(labels: &[NLILabel]) -> Result<Option<NLILabel>, CorpusError> {
    if labels.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let dist = LabelDistribution::from_labels(labels);
    let max = dist.max_count();
    let mut winners = NLILabel::ALL.into_iter().filter(|l| dist.count(*l) == max);
    let first = winners.next();
    Ok(if winners.next().is_some() { None } else { first })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<NLIProblem>,
    /// Problems dropped because they carry no five-label annotation.
    pub missing_annotations: usize,
}

/// Keep the problems whose five annotator labels have a maximum count of
/// exactly three. Input order is preserved.
pub fn filter_three_of_five(problems: &[NLIProblem]) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    for p in problems {
        match p.annotator_labels.as_deref() {
            Some(labels) if labels.len() == 5 => {
                if LabelDistribution::from_labels(labels).max_count() == 3 {
                    out.kept.push(p.clone());
                }
            }
            _ => out.missing_annotations += 1,
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub prompt: usize,
    pub validation: usize,
    pub evaluation: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.prompt + self.validation + self.evaluation
    }
}

/// Shuffle with a seeded ChaCha8 stream, then hand out prompt, validation,
/// and evaluation slots in that order. Output keeps input order; problems
/// past the requested counts become `Unassigned`.
pub fn assign_splits(
    problems: &[NLIProblem],
    counts: SplitCounts,
    seed: u64,
) -> Result<Vec<NLIProblem>, CorpusError> {
    if counts.total() > problems.len() {
        return Err(CorpusError::InsufficientProblems {
            needed: counts.total(),
            available: problems.len(),
        });
    }
    let mut order: Vec<usize> = (0..problems.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut out = problems.to_vec();
    for (rank, &idx) in order.iter().enumerate() {
        let split = if rank < counts.prompt {
            Split::Prompt
        } else if rank < counts.prompt + counts.validation {
            Split::Validation
        } else if rank < counts.total() {
            Split::Evaluation
        } else {
            Split::Unassigned
        };
        out[idx].split = Some(split);
    }
    Ok(out)
}

/// Seeded sample of `n` problems, returned in input order.
pub fn sample_problems(
    problems: &[NLIProblem],
    n: usize,
    seed: u64,
) -> Result<Vec<NLIProblem>, CorpusError> {
    if n > problems.len() {
        return Err(CorpusError::InsufficientProblems {
            needed: n,
            available: problems.len(),
        });
    }
    let mut order: Vec<usize> = (0..problems.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut picked: Vec<usize> = order.into_iter().take(n).collect();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| problems[i].clone()).collect())
}

/// Count problems per split label; `None` splits are reported as unassigned.
pub fn split_sizes(problems: &[NLIProblem]) -> BTreeMap<Split, usize> {
    let mut m = BTreeMap::new();
    for p in problems {
        *m.entry(p.split.unwrap_or(Split::Unassigned)).or_insert(0) += 1;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use NLILabel::*;

    fn p(id: &str, labels: &[NLILabel]) -> NLIProblem {
        NLIProblem::new(id, "P", "H", labels[0]).with_annotators(labels.to_vec())
    }

    #[test]
    fn majority_examples() {
        assert_eq!(
            majority_label(&[Entailment, Entailment, Neutral, Entailment, Neutral]).unwrap(),
            Some(Entailment)
        );
        assert_eq!(majority_label(&[Entailment; 5]).unwrap(), Some(Entailment));
        assert_eq!(
            majority_label(&[Entailment, Entailment, Neutral, Neutral, Contradiction]).unwrap(),
            None
        );
        assert!(matches!(majority_label(&[]), Err(CorpusError::EmptyInput)));
    }

    #[test]
    fn three_of_five_filter() {
        let ps = vec![
            p("a", &[Entailment, Entailment, Entailment, Neutral, Neutral]),
            p("b", &[Entailment; 5]),
            p("c", &[Entailment, Entailment, Entailment, Neutral, Contradiction]),
            NLIProblem::new("d", "P", "H", Neutral),
        ];
        let out = filter_three_of_five(&ps);
        let ids: Vec<_> = out.kept.iter().map(|p| p.id.as_str()).collect();
        assert_eq!(ids, ["a", "c"]);
        assert_eq!(out.missing_annotations, 1);
    }

    #[test]
    fn splits_cover_fixed_partition() {
        let ps: Vec<_> = (0..102)
            .map(|i| NLIProblem::new(format!("p{i}"), "P", "H", Neutral))
            .collect();
        let counts = SplitCounts { prompt: 10, validation: 27, evaluation: 65 };
        let out = assign_splits(&ps, counts, 3).unwrap();
        let sizes = split_sizes(&out);
        assert_eq!(sizes[&Split::Prompt], 10);
        assert_eq!(sizes[&Split::Validation], 27);
        assert_eq!(sizes[&Split::Evaluation], 65);
        assert!(!sizes.contains_key(&Split::Unassigned));
        assert_eq!(out, assign_splits(&ps, counts, 3).unwrap());

        let none = assign_splits(&ps, SplitCounts::default(), 3).unwrap();
        assert!(none.iter().all(|p| p.split == Some(Split::Unassigned)));

        let too_many = SplitCounts { prompt: 100, validation: 3, evaluation: 0 };
        assert!(matches!(
            assign_splits(&ps, too_many, 3),
            Err(CorpusError::InsufficientProblems { needed: 103, available: 102 })
        ));
    }

    #[test]
    fn parse_maps_fields_and_skips_no_consensus() {
        let text = r#"{"premise":"P","hypothesis":"H","label":"neutral"}"#;
        let c = parse_corpus(text, Source::Custom, &FieldMap::default()).unwrap();
        assert_eq!(c.problems.len(), 1);
        assert_eq!(c.problems[0].gold_label, Neutral);
        assert_eq!(c.problems[0].id, "custom-1");

        let empty = parse_corpus("", Source::Custom, &FieldMap::default()).unwrap();
        assert!(empty.problems.is_empty());
        assert_eq!(empty.skipped_no_consensus, 0);
    }

    #[test]
    fn ten_line_snli_fixture() {
        // Hand-built SNLI-format lines: two carry the "-" no-consensus label,
        // one has a single annotator label.
        let lines = [
            r#"{"pairID":"1","sentence1":"A","sentence2":"B","gold_label":"entailment","annotator_labels":["entailment","entailment","entailment","neutral","neutral"]}"#,
            r#"{"pairID":"2","sentence1":"A","sentence2":"B","gold_label":"-","annotator_labels":["entailment","entailment","neutral","neutral","contradiction"]}"#,
            r#"{"pairID":"3","sentence1":"A","sentence2":"B","gold_label":"neutral","annotator_labels":["neutral"]}"#,
            r#"{"pairID":"4","sentence1":" A ","sentence2":"B","gold_label":"contradiction","annotator_labels":["contradiction","contradiction","contradiction","contradiction","contradiction"]}"#,
            r#"{"pairID":"5","sentence1":"A","sentence2":"B","gold_label":"e"}"#,
            r#"{"pairID":"6","sentence1":"A","sentence2":"B","gold_label":"n"}"#,
            r#"{"pairID":"7","sentence1":"A","sentence2":"B","gold_label":"c"}"#,
            r#"{"pairID":"8","sentence1":"A","sentence2":"B","gold_label":"-"}"#,
            r#"{"pairID":"9","sentence1":"A","sentence2":"B","gold_label":2}"#,
            r#"{"pairID":"10","sentence1":"A","sentence2":"B","gold_label":"Neutral"}"#,
        ];
        let c = parse_corpus(&lines.join("\n"), Source::SnliDev, &FieldMap::default()).unwrap();
        assert_eq!(c.problems.len(), 8);
        assert_eq!(c.skipped_no_consensus, 2);
        assert_eq!(c.nonstandard_annotations, 1);
        assert_eq!(c.problems[2].premise, "A");
        assert_eq!(c.problems[6].gold_label, Contradiction);
        assert_eq!(c.problems[7].gold_label, Neutral);
    }

    #[test]
    fn parse_errors_carry_context() {
        let bad = "{\"premise\":\"P\",\"hypothesis\":\"H\",\"label\":\"neutral\"}\nnot json";
        assert!(matches!(
            parse_corpus(bad, Source::Custom, &FieldMap::default()),
            Err(CorpusError::MalformedLine { line: 2, .. })
        ));
        let unknown = r#"{"premise":"P","hypothesis":"H","label":"maybe"}"#;
        assert!(matches!(
            parse_corpus(unknown, Source::Custom, &FieldMap::default()),
            Err(CorpusError::UnknownLabel(t)) if t == "maybe"
        ));
        let blank = r#"{"premise":"  ","hypothesis":"H","label":"e"}"#;
        assert!(matches!(
            parse_corpus(blank, Source::Custom, &FieldMap::default()),
            Err(CorpusError::MalformedLine { line: 1, .. })
        ));
        assert!(matches!(
            load_corpus(Path::new("/nonexistent/x.jsonl"), Source::Custom),
            Err(CorpusError::FileNotFound(_))
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "{\"id\":\"x\",\"premise\":\"P\",\"hypothesis\":\"H\",\"label\":\"e\"}\n{\"id\":\"x\",\"premise\":\"P\",\"hypothesis\":\"H\",\"label\":\"e\"}";
        assert!(matches!(
            parse_corpus(text, Source::Custom, &FieldMap::default()),
            Err(CorpusError::DuplicateId(_))
        ));
    }

    #[test]
    fn label_others() {
        assert_eq!(Neutral.others(), [Entailment, Contradiction]);
    }
}
