//! Byte-exact prompt construction.
//!
//! Layout conventions: prompt sections are joined by a single `\n`; inside a
//! discussion, utterances are joined by single spaces (`Human1: ... Human2:
//! ...`). Labels always render lowercase. No renderer emits trailing
//! whitespace.
//!
//! Few-shot exemplar block:
//!
//! ```text
//! Premise: <premise>
//! Hypothesis: <hypothesis>
//! Discussion: Human1: ... Human2: ...      (few-shot-discussion only)
//! Label: <gold>
//! ```
//!
//! The target problem follows the same shape and ends with a bare `Label:`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{NLILabel, NLIProblem};
use crate::transcript::{render_utterances, DiscussionRecord, Speaker, Utterance};

pub const DEFAULT_TASK_DESCRIPTION: &str = "Predict whether the relationship between the premise and the hypothesis is entailment, contradiction, or neutral.";
pub const DEFAULT_FINALIZE_CUE: &str = "The discussion is finished. Predict the final label of the premise and the hypothesis.";

const PSEUDO_GEN_INSTRUCTION: &str = "Reproduce a multi-turn interactive discussion in which the following premise and hypothesis are entailment, contradiction, or neutral, with the humans agreeing with each other on the final label.";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("exemplar {0:?} has no discussion but the mode requires one")]
    MissingDiscussion(String),
    #[error("zero-shot prompts take no exemplars")]
    ModeMismatch,
    #[error("the two labels must differ")]
    EqualLabels,
    #[error("final label must be one of the two human labels")]
    FinalNotHeld,
    #[error("utterance text is empty")]
    EmptyUtterance,
    #[error("history is empty")]
    EmptyHistory,
    #[error("prefix does not end with the marker of {0}")]
    PrefixMismatch(Speaker),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    ZeroShot,
    FewShot,
    FewShotDiscussion,
}

impl PromptMode {
    pub const ALL: [PromptMode; 3] = [PromptMode::ZeroShot, PromptMode::FewShot, PromptMode::FewShotDiscussion];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::ZeroShot => "zero-shot",
            PromptMode::FewShot => "few-shot",
            PromptMode::FewShotDiscussion => "few-shot-discussion",
        }
    }

    /// Row label used in report tables.
    pub fn row_label(self) -> &'static str {
        match self {
            PromptMode::ZeroShot => "zero-shot",
            PromptMode::FewShot => "few-shot",
            PromptMode::FewShotDiscussion => "few-shot-dis.",
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zero-shot" => Ok(PromptMode::ZeroShot),
            "few-shot" => Ok(PromptMode::FewShot),
            "few-shot-discussion" | "few-shot-dis" => Ok(PromptMode::FewShotDiscussion),
            other => Err(format!("unknown prompt mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub problem: NLIProblem,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discussion: Option<DiscussionRecord>,
}

impl Exemplar {
    pub fn new(problem: NLIProblem, discussion: Option<DiscussionRecord>) -> Self {
        Self { problem, discussion }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub text: String,
    pub stop_sequences: Vec<String>,
    pub mode: PromptMode,
    pub fingerprint: String,
}

impl RenderedPrompt {
    pub fn new(text: String, stop_sequences: Vec<String>, mode: PromptMode) -> Self {
        let fingerprint = fingerprint(&text, &stop_sequences, mode);
        Self { text, stop_sequences, mode, fingerprint }
    }
}

/// SHA-256 over text, stops, and mode with unit/record separators between
/// fields, hex encoded.
pub fn fingerprint(text: &str, stops: &[String], mode: PromptMode) -> String {
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    h.update([0x1f]);
    for s in stops {
        h.update(s.as_bytes());
        h.update([0x1e]);
    }
    h.update([0x1f]);
    h.update(mode.as_str().as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub task_description: String,
    pub finalize_cue: String,
    /// Joins prompt sections.
    pub section_joiner: String,
    /// Joins utterances inside a discussion.
    pub turn_joiner: String,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            task_description: DEFAULT_TASK_DESCRIPTION.to_string(),
            finalize_cue: DEFAULT_FINALIZE_CUE.to_string(),
            section_joiner: "\n".to_string(),
            turn_joiner: " ".to_string(),
        }
    }
}

/// How a label reads inside the pseudo-generation sentence
/// "Human1's label is ...".
pub fn label_phrase(label: NLILabel) -> &'static str {
    match label {
        NLILabel::Entailment => "entailment",
        NLILabel::Contradiction => "a contradiction",
        NLILabel::Neutral => "neutral",
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Prompter {
    pub config: PromptConfig,
}

impl Prompter {
    pub fn new(config: PromptConfig) -> Self {
        Self { config }
    }

    fn join_turns(&self, utterances: &[Utterance]) -> String {
        if self.config.turn_joiner == " " {
            return render_utterances(utterances);
        }
        utterances
            .iter()
            .map(Utterance::render)
            .collect::<Vec<_>>()
            .join(&self.config.turn_joiner)
    }

    /// The discussion body of a record in exemplar format.
    pub fn render_discussion(&self, record: &DiscussionRecord) -> String {
        self.join_turns(&record.utterances)
    }

    fn check_exemplars(&self, mode: PromptMode, exemplars: &[Exemplar]) -> Result<(), PromptError> {
        match mode {
            PromptMode::ZeroShot if !exemplars.is_empty() => Err(PromptError::ModeMismatch),
            PromptMode::FewShotDiscussion => {
                match exemplars.iter().find(|e| e.discussion.is_none()) {
                    Some(e) => Err(PromptError::MissingDiscussion(e.problem.id.clone())),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }

    /// Task description plus exemplar blocks: everything that precedes the
    /// problem being asked about.
    pub fn render_preamble(&self, mode: PromptMode, exemplars: &[Exemplar]) -> Result<String, PromptError> {
        self.check_exemplars(mode, exemplars)?;
        let nl = &self.config.section_joiner;
        let mut sections = vec![self.config.task_description.clone()];
        for ex in exemplars {
            sections.push(format!("Premise: {}", ex.problem.premise));
            sections.push(format!("Hypothesis: {}", ex.problem.hypothesis));
            if mode == PromptMode::FewShotDiscussion {
                let d = ex.discussion.as_ref().expect("checked above");
                sections.push(format!("Discussion: {}", self.render_discussion(d)));
            }
            sections.push(format!("Label: {}", ex.problem.gold_label));
        }
        Ok(sections.join(nl))
    }

    pub fn render_task_prompt(
        &self,
        mode: PromptMode,
        exemplars: &[Exemplar],
        problem: &NLIProblem,
    ) -> Result<RenderedPrompt, PromptError> {
        let nl = &self.config.section_joiner;
        let preamble = self.render_preamble(mode, exemplars)?;
        let text = format!(
            "{preamble}{nl}Premise: {}{nl}Hypothesis: {}{nl}Label:",
            problem.premise, problem.hypothesis
        );
        Ok(RenderedPrompt::new(text, vec!["\n".to_string()], mode))
    }

    /// The bare continuation block:
    /// `Premise: .. Hypothesis: .. Label: <a> or <b> Discussion: <prefix>`.
    pub fn render_continuation(
        &self,
        problem: &NLIProblem,
        label_pair: (NLILabel, NLILabel),
        prefix: &str,
        next_speaker: Speaker,
    ) -> Result<RenderedPrompt, PromptError> {
        let text = self.continuation_text(problem, label_pair, prefix, next_speaker)?;
        Ok(RenderedPrompt::new(text, continuation_stops(next_speaker), PromptMode::ZeroShot))
    }

    fn continuation_text(
        &self,
        problem: &NLIProblem,
        (a, b): (NLILabel, NLILabel),
        prefix: &str,
        next_speaker: Speaker,
    ) -> Result<String, PromptError> {
        if a == b {
            return Err(PromptError::EqualLabels);
        }
        if !prefix.ends_with(next_speaker.marker()) {
            return Err(PromptError::PrefixMismatch(next_speaker));
        }
        Ok(format!(
            "Premise: {} Hypothesis: {} Label: {a} or {b} Discussion: {prefix}",
            problem.premise, problem.hypothesis
        ))
    }

    /// Continuation block preceded by the mode's preamble; this is what the
    /// generation experiment sends.
    pub fn render_generation_prompt(
        &self,
        mode: PromptMode,
        exemplars: &[Exemplar],
        problem: &NLIProblem,
        label_pair: (NLILabel, NLILabel),
        prefix: &str,
        next_speaker: Speaker,
    ) -> Result<RenderedPrompt, PromptError> {
        let preamble = self.render_preamble(mode, exemplars)?;
        let body = self.continuation_text(problem, label_pair, prefix, next_speaker)?;
        let text = format!("{preamble}{}{body}", self.config.section_joiner);
        Ok(RenderedPrompt::new(text, continuation_stops(next_speaker), mode))
    }

    /// Task prompt with the system's initial prediction filled in; every
    /// session turn is appended to this.
    pub fn render_session_base(
        &self,
        task_prompt: &RenderedPrompt,
        initial_label: NLILabel,
    ) -> RenderedPrompt {
        RenderedPrompt::new(
            format!("{} {initial_label}", task_prompt.text),
            vec![Speaker::Human.marker().to_string()],
            task_prompt.mode,
        )
    }

    fn session_history(&self, base: &RenderedPrompt, history: &[Utterance]) -> String {
        let mut text = base.text.clone();
        text.push_str(&self.config.section_joiner);
        if !history.is_empty() {
            text.push_str(&self.join_turns(history));
            text.push_str(&self.config.turn_joiner);
        }
        text
    }

    pub fn render_session_turn(
        &self,
        base: &RenderedPrompt,
        history: &[Utterance],
        human_text: &str,
    ) -> Result<RenderedPrompt, PromptError> {
        let human_text = human_text.trim();
        if human_text.is_empty() {
            return Err(PromptError::EmptyUtterance);
        }
        let mut text = self.session_history(base, history);
        text.push_str(&format!(
            "{} {human_text}{}{}",
            Speaker::Human.marker(),
            self.config.turn_joiner,
            Speaker::System.marker()
        ));
        Ok(RenderedPrompt::new(text, vec![Speaker::Human.marker().to_string()], base.mode))
    }

    pub fn render_finalize(
        &self,
        base: &RenderedPrompt,
        history: &[Utterance],
    ) -> Result<RenderedPrompt, PromptError> {
        if history.is_empty() {
            return Err(PromptError::EmptyHistory);
        }
        let nl = &self.config.section_joiner;
        let text = format!(
            "{}{nl}{}{nl}{}{nl}Label:",
            base.text,
            self.join_turns(history),
            self.config.finalize_cue
        );
        Ok(RenderedPrompt::new(text, vec!["\n".to_string()], base.mode))
    }

    pub fn render_pseudo_gen(
        &self,
        problem: &NLIProblem,
        h1: NLILabel,
        h2: NLILabel,
        final_label: NLILabel,
    ) -> Result<RenderedPrompt, PromptError> {
        if h1 == h2 {
            return Err(PromptError::EqualLabels);
        }
        if final_label != h1 && final_label != h2 {
            return Err(PromptError::FinalNotHeld);
        }
        let text = format!(
            "{PSEUDO_GEN_INSTRUCTION} Human1's label is {}, and Human2's label is {}. In the end, they agree on the label of {final_label}. Premise: {} Hypothesis: {}",
            label_phrase(h1),
            label_phrase(h2),
            problem.premise,
            problem.hypothesis
        );
        Ok(RenderedPrompt::new(text, Vec::new(), PromptMode::ZeroShot))
    }
}

/// Stop at the markers of every other transcript speaker.
pub fn continuation_stops(next_speaker: Speaker) -> Vec<String> {
    vec![next_speaker.counterpart().marker().to_string()]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transcript::Provenance;
    use NLILabel::*;

    fn nun() -> NLIProblem {
        NLIProblem::new("nun", "A nun is taking a picture outside.", "A nun is taking a selfie.", Neutral)
    }

    fn nun_discussion() -> DiscussionRecord {
        DiscussionRecord {
            problem_id: "nun".into(),
            participants: [(Speaker::Human1, Entailment), (Speaker::Human2, Neutral)].into_iter().collect(),
            final_label: Neutral,
            utterances: vec![
                Utterance::new(0, Speaker::Human1, "I think it is entailment, because the nun is taking a picture, so it might be a selfie."),
                Utterance::new(1, Speaker::Human2, "Since it is outside, it is conceivable that the nun is taking some scenery."),
            ],
            provenance: Provenance::Human,
            created_at: None,
            split: None,
        }
    }

    #[test]
    fn zero_shot_structure() {
        let p = Prompter::default();
        let r = p.render_task_prompt(PromptMode::ZeroShot, &[], &nun()).unwrap();
        assert_eq!(r.text.matches("Premise:").count(), 1);
        assert_eq!(r.text.matches("Hypothesis:").count(), 1);
        assert!(r.text.ends_with("Label:"));
        let ex = Exemplar::new(nun(), None);
        assert_eq!(
            p.render_task_prompt(PromptMode::ZeroShot, &[ex], &nun()),
            Err(PromptError::ModeMismatch)
        );
    }

    #[test]
    fn discussion_mode_needs_discussions() {
        let p = Prompter::default();
        let ex = Exemplar::new(nun(), None);
        assert_eq!(
            p.render_task_prompt(PromptMode::FewShotDiscussion, &[ex], &nun()),
            Err(PromptError::MissingDiscussion("nun".into()))
        );
        let ex = Exemplar::new(nun(), Some(nun_discussion()));
        let r = p.render_task_prompt(PromptMode::FewShotDiscussion, &[ex], &nun()).unwrap();
        let h1 = r.text.find("Human1:").unwrap();
        let h2 = r.text.find("Human2:").unwrap();
        assert!(h1 < h2);
        assert_eq!(r.text.matches("Premise:").count(), 2);
    }

    #[test]
    fn continuation_matches_quoted_form() {
        let p = Prompter::default();
        let d = nun_discussion();
        let prefix = crate::transcript::context_prefix(&d, 1).unwrap();
        let r = p.render_continuation(&nun(), (Entailment, Neutral), &prefix, Speaker::Human2).unwrap();
        assert_eq!(
            r.text,
            "Premise: A nun is taking a picture outside. Hypothesis: A nun is taking a selfie. Label: entailment or neutral Discussion: Human1: I think it is entailment, because the nun is taking a picture, so it might be a selfie. Human2:"
        );
        assert_eq!(r.stop_sequences, vec!["Human1:".to_string()]);
        assert_eq!(
            p.render_continuation(&nun(), (Neutral, Neutral), &prefix, Speaker::Human2),
            Err(PromptError::EqualLabels)
        );
    }

    #[test]
    fn session_turn_suffix() {
        let p = Prompter::default();
        let task = p.render_task_prompt(PromptMode::ZeroShot, &[], &nun()).unwrap();
        let base = p.render_session_base(&task, Contradiction);
        let text = "Let's discuss it more. I think neutral, because there may be a kitchen in the barn.";
        let r = p.render_session_turn(&base, &[], text).unwrap();
        assert!(r.text.ends_with(
            "\nHuman: Let's discuss it more. I think neutral, because there may be a kitchen in the barn. System:"
        ));
        assert_eq!(r.stop_sequences, vec!["Human:".to_string()]);
        assert_eq!(p.render_session_turn(&base, &[], "  "), Err(PromptError::EmptyUtterance));
    }

    #[test]
    fn finalize_differs_from_turn() {
        let p = Prompter::default();
        let task = p.render_task_prompt(PromptMode::ZeroShot, &[], &nun()).unwrap();
        let base = p.render_session_base(&task, Contradiction);
        let hist = vec![
            Utterance::new(0, Speaker::Human, "I think neutral."),
            Utterance::new(1, Speaker::System, "You are right."),
        ];
        let fin = p.render_finalize(&base, &hist).unwrap();
        assert!(fin.text.ends_with("Label:"));
        let turn = p.render_session_turn(&base, &hist, "ok").unwrap();
        assert_ne!(fin.fingerprint, turn.fingerprint);
        assert_eq!(p.render_finalize(&base, &[]), Err(PromptError::EmptyHistory));
    }

    #[test]
    fn pseudo_gen_template() {
        let p = Prompter::default();
        let r = p.render_pseudo_gen(&nun(), Neutral, Contradiction, Neutral).unwrap();
        assert!(r.text.contains(
            "Human1's label is neutral, and Human2's label is a contradiction. In the end, they agree on the label of neutral."
        ));
        assert_eq!(
            p.render_pseudo_gen(&nun(), Neutral, Contradiction, Entailment),
            Err(PromptError::FinalNotHeld)
        );
        assert_eq!(
            p.render_pseudo_gen(&nun(), Neutral, Neutral, Neutral),
            Err(PromptError::EqualLabels)
        );
        let again = p.render_pseudo_gen(&nun(), Neutral, Contradiction, Neutral).unwrap();
        assert_eq!(r.fingerprint, again.fingerprint);
    }
}
