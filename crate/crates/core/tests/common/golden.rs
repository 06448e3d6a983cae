//! Golden prompt fixture set, shared by the prompt tests and the acceptance
//! target. Each case renders to `fixtures/prompts/<name>.txt`.

use std::path::PathBuf;

use discuss_core::corpus::{NLILabel, NLIProblem};
use discuss_core::prompting::{Exemplar, PromptMode, Prompter};
use discuss_core::transcript::{context_prefix, DiscussionRecord, Provenance, Speaker, Utterance};

use NLILabel::*;

pub fn prompt_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/prompts")
}

fn nun() -> NLIProblem {
    NLIProblem::new("nun", "A nun is taking a picture outside.", "A nun is taking a selfie.", Neutral)
}

fn barn() -> NLIProblem {
    NLIProblem::new(
        "barn",
        "A woman is cooking in a barn.",
        "A woman is making food in a kitchen.",
        Contradiction,
    )
}

fn nun_discussion() -> DiscussionRecord {
    DiscussionRecord {
        problem_id: "nun".into(),
        participants: [(Speaker::Human1, Entailment), (Speaker::Human2, Neutral)].into_iter().collect(),
        final_label: Neutral,
        utterances: vec![
            Utterance::new(0, Speaker::Human1, "I think it is entailment, because the nun is taking a picture, so it might be a selfie."),
            Utterance::new(1, Speaker::Human2, "Since it is outside, it is conceivable that the nun is taking some scenery."),
            Utterance::new(2, Speaker::Human1, "That is true. A selfie is only one kind of picture."),
            Utterance::new(3, Speaker::Human2, "So we cannot tell. Neutral."),
        ],
        provenance: Provenance::Human,
        created_at: None,
        split: None,
    }
}

/// `(file stem, rendered text)` for every renderer.
pub fn render_all() -> Vec<(&'static str, String)> {
    let p = Prompter::default();
    let with_dis = vec![Exemplar::new(nun(), Some(nun_discussion()))];
    let plain = vec![Exemplar::new(nun(), None)];
    let mut out = Vec::new();

    let zero = p.render_task_prompt(PromptMode::ZeroShot, &[], &barn()).unwrap();
    out.push(("task_zero_shot", zero.text.clone()));
    out.push(("task_few_shot", p.render_task_prompt(PromptMode::FewShot, &plain, &barn()).unwrap().text));
    let dis = p.render_task_prompt(PromptMode::FewShotDiscussion, &with_dis, &barn()).unwrap();
    out.push(("task_few_shot_discussion", dis.text.clone()));

    let d = nun_discussion();
    let prefix = context_prefix(&d, 1).unwrap();
    out.push((
        "continuation_nun",
        p.render_continuation(&nun(), (Entailment, Neutral), &prefix, Speaker::Human2).unwrap().text,
    ));
    let prefix3 = context_prefix(&d, 3).unwrap();
    out.push((
        "generation_few_shot_discussion",
        p.render_generation_prompt(
            PromptMode::FewShotDiscussion,
            &with_dis,
            &nun(),
            (Entailment, Neutral),
            &prefix3,
            Speaker::Human2,
        )
        .unwrap()
        .text,
    ));

    let base = p.render_session_base(&dis, Neutral);
    out.push(("session_base", base.text.clone()));
    let first = "Let's discuss it more. I think contradiction, because a barn is not a kitchen.";
    out.push(("session_turn_first", p.render_session_turn(&base, &[], first).unwrap().text));
    let history = vec![
        Utterance::new(0, Speaker::Human, first),
        Utterance::new(1, Speaker::System, "You are right. A barn is not a kitchen."),
    ];
    out.push(("session_turn_second", p.render_session_turn(&base, &history, "So what is the label?").unwrap().text));
    out.push(("session_finalize", p.render_finalize(&base, &history).unwrap().text));
    let zbase = p.render_session_base(&zero, Entailment);
    out.push(("session_finalize_zero_shot", p.render_finalize(&zbase, &history).unwrap().text));

    out.push(("pseudo_gen_nun", p.render_pseudo_gen(&nun(), Neutral, Contradiction, Neutral).unwrap().text));
    out.push(("pseudo_gen_barn", p.render_pseudo_gen(&barn(), Entailment, Contradiction, Contradiction).unwrap().text));
    out
}

/// Names whose fixture is missing or differs from the rendered text.
pub fn mismatches() -> Vec<String> {
    let dir = prompt_dir();
    render_all()
        .into_iter()
        .filter(|(name, text)| std::fs::read(dir.join(format!("{name}.txt"))).ok().as_deref() != Some(text.as_bytes()))
        .map(|(name, _)| name.to_string())
        .collect()
}
