use std::collections::BTreeMap;

use proptest::prelude::*;

use discuss_core::corpus::{
    assign_splits, filter_three_of_five, majority_label, parse_corpus, sample_problems, split_sizes, to_jsonl,
    CorpusError, FieldMap, NLILabel, NLIProblem, Source, Split, SplitCounts,
};

use NLILabel::*;

const SNLI: &str = r#"{"pairID": "1", "sentence1": "A nun is taking a picture outside.", "sentence2": "A nun is taking a selfie.", "gold_label": "neutral", "annotator_labels": ["neutral", "neutral", "entailment", "neutral", "contradiction"]}
{"pairID": "2", "sentence1": "Two dogs run.", "sentence2": "Animals move.", "gold_label": "entailment", "annotator_labels": ["entailment", "entailment", "entailment", "entailment", "entailment"]}

{"pairID": "3", "sentence1": "A man sleeps.", "sentence2": "A man sings.", "gold_label": "-", "annotator_labels": ["neutral", "contradiction", "entailment", "neutral", "contradiction"]}
{"pairID": "4", "sentence1": "A kid jumps.", "sentence2": "A kid is still.", "gold_label": "contradiction", "annotator_labels": ["contradiction"]}
"#;

const ANLI: &str = r#"{"uid": "a1", "context": "The river froze in January.", "hypothesis": "The river froze in summer.", "label": "c"}
{"uid": "a2", "context": "She won the race.", "hypothesis": "She ran.", "label": "e"}
{"uid": "a3", "context": "He bought bread.", "hypothesis": "He bought rye bread.", "label": "n"}
"#;

#[test]
fn snli_layout() {
    let c = parse_corpus(SNLI, Source::SnliDev, &FieldMap::default()).unwrap();
    assert_eq!(c.problems.len(), 3);
    assert_eq!(c.skipped_no_consensus, 1);
    assert_eq!(c.nonstandard_annotations, 1);
    assert_eq!(c.problems[0].gold_label, Neutral);
    assert!(c.problems[2].annotator_labels.is_none());
    let kept = filter_three_of_five(&c.problems);
    assert_eq!(kept.kept.iter().map(|p| p.id.as_str()).collect::<Vec<_>>(), ["1"]);
    assert_eq!(kept.missing_annotations, 1);
}

#[test]
fn anli_layout() {
    let c = parse_corpus(ANLI, Source::AnliR2, &FieldMap::default()).unwrap();
    let labels: Vec<_> = c.problems.iter().map(|p| p.gold_label).collect();
    assert_eq!(labels, [Contradiction, Entailment, Neutral]);
    assert!(c.problems.iter().all(|p| p.source.column() == "R2"));
}

#[test]
fn errors_name_the_line() {
    let bad = "{\"id\": \"x\", \"premise\": \"p\", \"hypothesis\": \"h\", \"label\": \"neutral\"}\n{\"id\": \"y\", \"premise\": \"p\"}\n";
    match parse_corpus(bad, Source::Custom, &FieldMap::default()) {
        Err(CorpusError::MalformedLine { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    let dup = "{\"id\": \"x\", \"premise\": \"p\", \"hypothesis\": \"h\", \"label\": \"neutral\"}\n".repeat(2);
    assert!(matches!(parse_corpus(&dup, Source::Custom, &FieldMap::default()), Err(CorpusError::DuplicateId(_))));
    let unknown = "{\"id\": \"x\", \"premise\": \"p\", \"hypothesis\": \"h\", \"label\": \"maybe\"}\n";
    assert!(parse_corpus(unknown, Source::Custom, &FieldMap::default()).is_err());
}

#[test]
fn jsonl_round_trip() {
    let c = parse_corpus(SNLI, Source::SnliDev, &FieldMap::default()).unwrap();
    let text = to_jsonl(&c.problems);
    let back = parse_corpus(&text, Source::SnliDev, &FieldMap::default()).unwrap();
    assert_eq!(back.problems, c.problems);
    assert_eq!(to_jsonl(&back.problems), text);
}

#[test]
fn majority_ties() {
    assert_eq!(majority_label(&[Neutral, Neutral, Entailment]).unwrap(), Some(Neutral));
    assert_eq!(majority_label(&[Neutral, Entailment]).unwrap(), None);
    assert!(majority_label(&[]).is_err());
}

fn numbered(n: usize) -> Vec<NLIProblem> {
    (0..n).map(|i| NLIProblem::new(format!("q{i}"), "P", "H", NLILabel::ALL[i % 3])).collect()
}

#[test]
fn splits_and_samples_are_seeded() {
    let ps = numbered(140);
    let counts = SplitCounts { prompt: 20, validation: 40, evaluation: 80 };
    let a = assign_splits(&ps, counts, 1).unwrap();
    assert_eq!(a, assign_splits(&ps, counts, 1).unwrap());
    assert_ne!(a, assign_splits(&ps, counts, 2).unwrap());
    let sizes = split_sizes(&a);
    assert_eq!(sizes[&Split::Prompt], 20);
    assert_eq!(sizes[&Split::Validation], 40);
    assert_eq!(sizes[&Split::Evaluation], 80);
    assert!(assign_splits(&ps, SplitCounts { prompt: 100, validation: 41, evaluation: 0 }, 1).is_err());

    let s = sample_problems(&ps, 10, 4).unwrap();
    assert_eq!(s, sample_problems(&ps, 10, 4).unwrap());
    let idx: Vec<usize> = s.iter().map(|p| p.id[1..].parse().unwrap()).collect();
    assert!(idx.windows(2).all(|w| w[0] < w[1]));
    assert!(sample_problems(&ps, 141, 4).is_err());
}

fn label() -> impl Strategy<Value = NLILabel> {
    prop_oneof![Just(Entailment), Just(Neutral), Just(Contradiction)]
}

proptest! {
    #[test]
    fn filter_keeps_exactly_three_majorities(sets in prop::collection::vec(prop::collection::vec(label(), 5), 0..60)) {
        let ps: Vec<NLIProblem> = sets
            .iter()
            .enumerate()
            .map(|(i, ls)| NLIProblem::new(format!("r{i}"), "P", "H", ls[0]).with_annotators(ls.clone()))
            .collect();
        let kept = filter_three_of_five(&ps).kept;
        let expected: Vec<&NLIProblem> = ps
            .iter()
            .filter(|p| {
                let mut m: BTreeMap<NLILabel, usize> = BTreeMap::new();
                for l in p.annotator_labels.as_ref().unwrap() {
                    *m.entry(*l).or_default() += 1;
                }
                m.values().max() == Some(&3)
            })
            .collect();
        prop_assert_eq!(kept.iter().collect::<Vec<_>>(), expected);
    }
}
