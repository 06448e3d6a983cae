//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

#[path = "../../core/tests/common/golden.rs"]
mod golden;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use discuss_core::corpus::{filter_three_of_five, load_corpus, NLILabel, NLIProblem, Source};
use discuss_core::gateway::{FnBackend, Gateway, HeuristicMock, SamplingParams};
use discuss_core::harness::{
    apply_noise, eval_scenarios, EvalContext, ModeSetup, NoiseKind, NoiseSpec, ReportItems, ReportShape,
};
use discuss_core::metrics::{greedy_match_score, mcnemar_test, welch_t_test, TokenEmbeddings};
use discuss_core::prompting::{Exemplar, PromptMode, Prompter};
use discuss_core::pseudogen::{finetune_jsonl, finetune_lines, generate_batch, FinetuneLine};
use discuss_core::session::{FinalPolicy, PolicyMock, ScriptedAgent};
use discuss_core::transcript::{parse_records_jsonl, records_to_jsonl, DiscussionRecord, Provenance, Speaker, Utterance};

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {:.2} s, limit {:.0} s", elapsed.as_secs_f64(), limit.as_secs_f64()))
}

// 1

fn prompt_golden() -> Outcome {
    let start = Instant::now();
    let bad = golden::mismatches();
    ensure(bad.is_empty(), || format!("mismatched fixtures: {bad:?}"))?;
    ensure(golden::render_all() == golden::render_all(), || "second render differs".into())?;
    let names: Vec<_> = golden::render_all().into_iter().map(|(n, _)| n).collect();
    for required in ["continuation_nun", "pseudo_gen_nun"] {
        ensure(names.contains(&required), || format!("fixture set lacks {required}"))?;
    }
    let cont = fs::read_to_string(golden::prompt_dir().join("continuation_nun.txt")).map_err(|e| e.to_string())?;
    ensure(cont.contains("Label: entailment or neutral Discussion:"), || "continuation fixture lacks label pair".into())?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("{} fixtures byte-identical", names.len()))
}

// 2

fn oracle_score(cand: &[Vec<f64>], refr: &[Vec<f64>]) -> (f64, f64, f64) {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        (dot / (na * nb)).clamp(0.0, 1.0)
    };
    let sims: Vec<Vec<f64>> = cand.iter().map(|c| refr.iter().map(|r| cos(c, r)).collect()).collect();
    let p = sims.iter().map(|row| row.iter().cloned().fold(f64::MIN, f64::max)).sum::<f64>() / cand.len() as f64;
    let r = (0..refr.len())
        .map(|j| sims.iter().map(|row| row[j]).fold(f64::MIN, f64::max))
        .sum::<f64>()
        / refr.len() as f64;
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

fn embeddings(vectors: Vec<Vec<f64>>) -> TokenEmbeddings {
    let tokens = (0..vectors.len()).map(|i| format!("t{i}")).collect();
    TokenEmbeddings::new(tokens, vectors).expect("valid embeddings")
}

fn scorer_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let dim = rng.random_range(1..=16);
        let side = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            let n = rng.random_range(1..=8);
            (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let (c, r) = (side(&mut rng), side(&mut rng));
        let got = greedy_match_score(&embeddings(c.clone()), &embeddings(r.clone())).map_err(|e| e.to_string())?;
        let want = oracle_score(&c, &r);
        for d in [got.precision - want.0, got.recall - want.1, got.f1 - want.2] {
            worst = worst.max(d.abs());
        }
    }
    ensure(worst <= 1e-9, || format!("max |delta| {worst:e}"))?;
    for n in 1..=8 {
        let v: Vec<Vec<f64>> = (0..n).map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let s = greedy_match_score(&embeddings(v.clone()), &embeddings(v)).map_err(|e| e.to_string())?;
        for x in [s.precision, s.recall, s.f1] {
            ensure((x - 1.0).abs() <= 1e-12, || format!("identity score {s:?}"))?;
        }
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("1000 instances, max |delta| {worst:.1e}; identity gives (1, 1, 1)"))
}

// 3

#[derive(Deserialize)]
struct WelchCase {
    xs: Vec<f64>,
    ys: Vec<f64>,
    p: String,
}

fn binom(n: u64, k: u64) -> BigUint {
    let mut c = BigUint::one();
    for i in 0..k {
        c = c * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    c
}

fn mcnemar_oracle(b: u64, c: u64) -> f64 {
    let n = b + c;
    if n == 0 {
        return 1.0;
    }
    let tail = (0..=b.min(c)).fold(BigUint::zero(), |acc, i| acc + binom(n, i));
    let num = tail * 2u32;
    let den = BigUint::one() << n;
    if num >= den {
        return 1.0;
    }
    // Both sides are below 2^53, so the division is correctly rounded.
    num.to_f64().unwrap() / den.to_f64().unwrap()
}

fn statistics() -> Outcome {
    let start = Instant::now();
    let text = fs::read_to_string(fixtures().join("oracles/welch_battery.json")).map_err(|e| e.to_string())?;
    let cases: Vec<WelchCase> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    ensure(cases.len() == 50, || format!("battery has {} cases", cases.len()))?;
    let mut welch_worst: f64 = 0.0;
    for (i, c) in cases.iter().enumerate() {
        let want: f64 = c.p.parse().map_err(|_| format!("case {i}: bad p"))?;
        let got = welch_t_test(&c.xs, &c.ys).map_err(|e| format!("case {i}: {e}"))?.p_value;
        welch_worst = welch_worst.max((got - want).abs());
    }
    ensure(welch_worst <= 1e-6, || format!("Welch max |delta| {welch_worst:e}"))?;

    let mut mc_worst: f64 = 0.0;
    for n in 0..=24u64 {
        for b in 0..=n {
            let got = mcnemar_test(b, n - b).p_value;
            mc_worst = mc_worst.max((got - mcnemar_oracle(b, n - b)).abs());
        }
    }
    ensure(mc_worst <= 1e-12, || format!("McNemar max |delta| {mc_worst:e}"))?;
    let p10 = mcnemar_test(10, 0).p_value;
    ensure(p10 == 2.0 * 0.5f64.powi(10), || format!("b=10, c=0 gives {p10}"))?;
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("Welch max |delta| {welch_worst:.1e} over 50 cases; McNemar max |delta| {mc_worst:.1e} for b+c <= 24"))
}

// 4

fn corpus_filter() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let problems: Vec<NLIProblem> = (0..1000)
        .map(|i| {
            let k = match rng.random_range(0..20) {
                0 => 0,
                1 => 4,
                _ => 5,
            };
            let labels: Vec<NLILabel> = (0..k).map(|_| NLILabel::ALL[rng.random_range(0..3)]).collect();
            let p = NLIProblem::new(format!("p{i}"), "P", "H", NLILabel::Neutral);
            if k == 0 {
                p
            } else {
                p.with_annotators(labels)
            }
        })
        .collect();
    let got: BTreeSet<String> = filter_three_of_five(&problems).kept.into_iter().map(|p| p.id).collect();
    let mut want = BTreeSet::new();
    for p in &problems {
        let Some(labels) = &p.annotator_labels else { continue };
        if labels.len() != 5 {
            continue;
        }
        let mut best = 0;
        for l in NLILabel::ALL {
            let mut n = 0;
            for x in labels {
                if *x == l {
                    n += 1;
                }
            }
            best = best.max(n);
        }
        if best == 3 {
            want.insert(p.id.clone());
        }
    }
    ensure(got == want, || format!("filter kept {} problems, tally {}", got.len(), want.len()))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("{} of 1000 kept, equal to tally", got.len()))
}

// 5

#[derive(Deserialize)]
struct SessionCase {
    id: String,
    premise: String,
    hypothesis: String,
    gold: NLILabel,
    initial: NLILabel,
}

fn session_fixture() -> Result<Vec<(NLIProblem, NLILabel)>, String> {
    let text = fs::read_to_string(fixtures().join("session_fixture.jsonl")).map_err(|e| e.to_string())?;
    text.lines()
        .map(|l| {
            let c: SessionCase = serde_json::from_str(l).map_err(|e| e.to_string())?;
            Ok((NLIProblem::new(c.id, c.premise, c.hypothesis, c.gold), c.initial))
        })
        .collect()
}

fn run_policy(policy: FinalPolicy, entries: &[(NLIProblem, NLILabel)]) -> Result<[f64; 4], String> {
    let backend = PolicyMock::new(policy, entries.iter().cloned());
    let ctx = EvalContext::new(Arc::new(Gateway::new(Arc::new(backend))), SamplingParams::default(), 5);
    let problems: Vec<_> = entries.iter().map(|(p, _)| p.clone()).collect();
    let setups = [ModeSetup::new(PromptMode::ZeroShot, Vec::new())];
    let (rates, ba) =
        eval_scenarios(&ctx, &problems, &setups, &ScriptedAgent::new(2, 5), 8).map_err(|e| e.to_string())?;
    ensure(rates.metadata.failures == 0, || format!("{policy:?}: {:?}", rates.notes))?;
    let row = "zero-shot";
    let get = |r: &discuss_core::harness::EvalReport, c: &str| r.table.value(row, c).unwrap_or(f64::NAN);
    if let ReportItems::Scenario(items) = &ba.items {
        ensure(items.len() == entries.len(), || format!("{policy:?}: {} outcomes", items.len()))?;
    }
    Ok([get(&rates, "Acceptance rate"), get(&rates, "Objection rate"), get(&ba, "Before"), get(&ba, "After")])
}

fn session_machine() -> Outcome {
    let start = Instant::now();
    let entries = session_fixture()?;
    ensure(entries.len() == 20, || format!("fixture has {} problems", entries.len()))?;
    let accept_frac = entries.iter().filter(|(p, i)| p.gold_label != *i).count() as f64 / entries.len() as f64;

    let [acc, obj, _, after] = run_policy(FinalPolicy::Oracle, &entries)?;
    ensure(acc == 1.0 && obj == 1.0 && after == 1.0, || format!("oracle: {acc} {obj} {after}"))?;
    let [_, obj, _, after] = run_policy(FinalPolicy::Capitulating, &entries)?;
    ensure(obj == 0.0 && after == accept_frac, || format!("capitulating: objection {obj}, after {after}"))?;
    let [acc, obj, _, _] = run_policy(FinalPolicy::Stubborn, &entries)?;
    ensure(acc == 0.0 && obj == 1.0, || format!("stubborn: {acc} {obj}"))?;
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("oracle, capitulating (after = {accept_frac}), stubborn exact"))
}

// 6

fn record(id: &str, n: usize) -> DiscussionRecord {
    DiscussionRecord {
        problem_id: id.into(),
        participants: [(Speaker::Human1, NLILabel::Entailment), (Speaker::Human2, NLILabel::Neutral)]
            .into_iter()
            .collect(),
        final_label: NLILabel::Neutral,
        utterances: (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { Speaker::Human1 } else { Speaker::Human2 };
                Utterance::new(i, s, format!("{id} says {i}"))
            })
            .collect(),
        provenance: Provenance::Human,
        created_at: None,
        split: None,
    }
}

fn noisy_exemplars(rng: &mut ChaCha8Rng, n: usize) -> Vec<Exemplar> {
    (0..n)
        .map(|i| {
            let id = format!("ex{i}");
            let len = rng.random_range(2..=8);
            Exemplar::new(NLIProblem::new(&id, "P", "H", NLILabel::Neutral), Some(record(&id, len)))
        })
        .collect()
}

fn noise() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for trial in 0..500u64 {
        let exs = noisy_exemplars(&mut rng, 5);
        let out = apply_noise(&exs, NoiseSpec::new(NoiseKind::TruncateDiscussion, trial), &[]).map_err(|e| e.to_string())?;
        for (a, b) in exs.iter().zip(&out.exemplars) {
            let (a, b) = (&a.discussion.as_ref().unwrap().utterances, &b.discussion.as_ref().unwrap().utterances);
            ensure(!b.is_empty() && b.len() < a.len() && a[..b.len()] == b[..], || {
                format!("trial {trial}: {} of {} utterances is not a strict prefix", b.len(), a.len())
            })?;
        }
    }

    let exs = noisy_exemplars(&mut rng, 30);
    let mut counts: BTreeMap<NLILabel, usize> = BTreeMap::new();
    for seed in 0..100 {
        let out = apply_noise(&exs, NoiseSpec::new(NoiseKind::RandomLabel, seed), &[]).map_err(|e| e.to_string())?;
        for e in out.exemplars {
            *counts.entry(e.problem.gold_label).or_default() += 1;
        }
    }
    let draws: f64 = 3000.0;
    let sigma = (draws * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
    for l in NLILabel::ALL {
        let c = counts.get(&l).copied().unwrap_or(0) as f64;
        ensure((c - draws / 3.0).abs() <= 3.0 * sigma, || format!("label {l}: {c} of 3000"))?;
    }

    let pool: Vec<_> = (0..20).map(|i| record(&format!("pool{i}"), 4)).collect();
    for trial in 0..500u64 {
        let exs = noisy_exemplars(&mut rng, 5);
        let out = apply_noise(&exs, NoiseSpec::new(NoiseKind::RandomDiscussion, trial), &pool).map_err(|e| e.to_string())?;
        for (a, b) in exs.iter().zip(&out.exemplars) {
            let d = b.discussion.as_ref().unwrap();
            ensure(d.problem_id != a.problem.id && Some(d) != a.discussion.as_ref(), || {
                format!("trial {trial}: {} kept its own discussion", a.problem.id)
            })?;
        }
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("500 strict prefixes; label counts {:?}; 500 foreign discussions", counts.values().collect::<Vec<_>>()))
}

// 7 and 9

fn cli(args: &[&str]) -> Result<(), String> {
    let config = workspace().join("data/demo/demo.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_nli-discuss"))
        .arg("--config")
        .arg(&config)
        .args(["--seed", "7"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn report_files(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut files = BTreeMap::new();
    for entry in fs::read_dir(dir.join("reports")).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        files.insert(name, fs::read(&path).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

const EXPERIMENTS: [(&str, &[&str]); 4] = [
    ("nli", &["eval", "nli", "--limit", "20"]),
    ("generation", &["eval", "generation"]),
    ("ablation", &["eval", "ablation", "--limit", "20"]),
    (
        "scenarios",
        &["eval", "scenarios", "--mode", "zero-shot", "--mode", "few-shot", "--mode", "few-shot-discussion", "--n", "30"],
    ),
];

fn end_to_end(root: &Path) -> Outcome {
    let mut checked = 0;
    for (name, args) in EXPERIMENTS {
        let dirs: Vec<PathBuf> = ["a", "b"].iter().map(|s| root.join(format!("{name}-{s}"))).collect();
        for d in &dirs {
            let mut full: Vec<&str> = args.to_vec();
            let out = d.to_string_lossy().into_owned();
            full.extend(["--out", &out]);
            cli(&full)?;
        }
        let replayed = root.join(format!("{name}-replay"));
        cli(&["replay", "--from", &dirs[0].to_string_lossy(), "--out", &replayed.to_string_lossy(), "--verify"])?;
        let a = report_files(&dirs[0])?;
        ensure(!a.is_empty(), || format!("{name}: no reports"))?;
        for other in [&dirs[1], &replayed] {
            let b = report_files(other)?;
            ensure(a == b, || format!("{name}: reports in {} differ", other.display()))?;
        }
        checked += a.len();
    }
    Ok(format!("{checked} report files identical across reruns and offline replay"))
}

fn report_shapes(root: &Path) -> Outcome {
    let sources = [
        ("generation", "generation-a/reports/generation.json"),
        ("scenario", "scenarios-a/reports/scenario.json"),
        ("before-after", "scenarios-a/reports/before-after.json"),
        ("nli-accuracy", "nli-a/reports/nli-accuracy.json"),
        ("ablation", "ablation-a/reports/ablation.json"),
    ];
    for (table, report) in sources {
        let want: ReportShape = serde_json::from_str(
            &fs::read_to_string(fixtures().join(format!("shapes/{table}.json"))).map_err(|e| e.to_string())?,
        )
        .map_err(|e| format!("{table}: {e}"))?;
        let value: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(root.join(report)).map_err(|e| format!("{report}: {e}"))?)
                .map_err(|e| e.to_string())?;
        let report: discuss_core::harness::EvalReport =
            serde_json::from_value(value).map_err(|e| format!("{report}: {e}"))?;
        let got = report.shape();
        ensure(got == want, || format!("{table}: got {got:?}"))?;
    }
    Ok("all five report kinds match committed shapes".into())
}

// 8

fn pseudogen() -> Outcome {
    let start = Instant::now();
    let corpus = load_corpus(&workspace().join("data/demo/snli_dev.jsonl"), Source::SnliDev).map_err(|e| e.to_string())?;
    let problems: Vec<NLIProblem> = corpus.problems.into_iter().take(50).collect();
    ensure(problems.len() == 50, || "demo corpus too small".into())?;
    // About one prompt in eight gets an unusable answer, so both outcomes occur.
    let mock = HeuristicMock::new(7);
    let backend = FnBackend::new("pseudo-mixed", move |req| {
        use discuss_core::gateway::Backend;
        if req.prompt.fingerprint.starts_with(['0', '1']) {
            return Ok(discuss_core::gateway::RawCompletion::text("I cannot produce that."));
        }
        mock.generate(req)
    });
    let gateway = Gateway::new(Arc::new(backend));
    let prompter = Prompter::default();
    let batch = generate_batch(&gateway, &prompter, &problems, &SamplingParams::default(), 7);
    ensure(batch.records.len() + batch.rejects.len() == 50, || {
        format!("{} records + {} rejects", batch.records.len(), batch.rejects.len())
    })?;
    for r in &batch.records {
        r.validate().map_err(|e| format!("{}: {e}", r.problem_id))?;
    }
    let jsonl = records_to_jsonl(&batch.records);
    let back = parse_records_jsonl(&jsonl).map_err(|e| e.to_string())?;
    ensure(records_to_jsonl(&back) == jsonl, || "record JSONL does not round-trip".into())?;

    let by_id: HashMap<String, NLIProblem> = problems.iter().map(|p| (p.id.clone(), p.clone())).collect();
    let lines = finetune_lines(&batch.records, &by_id, &prompter).map_err(|e| e.to_string())?;
    let exported = finetune_jsonl(&lines);
    let parsed: Vec<FinetuneLine> = exported.lines().map(serde_json::from_str).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
    ensure(finetune_jsonl(&parsed) == exported, || "fine-tuning JSONL does not round-trip".into())?;
    for (line, rec) in parsed.iter().zip(&back) {
        ensure(line.discussion == prompter.render_discussion(rec), || format!("{}: discussion differs", rec.problem_id))?;
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{} records + {} rejects = 50; exports round-trip", batch.records.len(), batch.rejects.len()))
}

fn main() {
    let root = tempfile::tempdir().expect("temp dir");
    let criteria: Vec<(&str, Box<dyn FnOnce() -> Outcome>)> = vec![
        ("prompt golden files", Box::new(prompt_golden)),
        ("greedy matching scorer vs oracle", Box::new(scorer_oracle)),
        ("Welch and McNemar vs oracles", Box::new(statistics)),
        ("three-of-five filter vs tally", Box::new(corpus_filter)),
        ("session state machine with policy mocks", Box::new(session_machine)),
        ("noise injectors", Box::new(noise)),
        ("end-to-end determinism and replay", Box::new(|| end_to_end(root.path()))),
        ("pseudo-discussion batch and export", Box::new(pseudogen)),
        ("report shapes", Box::new(|| report_shapes(root.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(check))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS {} {name} ({secs:.2} s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name} ({secs:.2} s): {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
