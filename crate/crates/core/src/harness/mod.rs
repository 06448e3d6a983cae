//! The four experiments and the noise ablation.
//!
//! Per-item work fans out over a rayon pool; results are collected in item
//! order, so reports do not depend on completion order.

mod noise;
mod report;

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use noise::{apply_noise, NoiseKind, NoiseSpec, NoisyExemplars};
pub use report::{
    Cell, EvalReport, GenerationItem, Mark, NliItem, ReportItems, ReportKind, ReportShape, Row,
    RunMetadata, Significance, Table, TraceEntry,
};

use crate::corpus::NLIProblem;
use crate::gateway::{parse_label, Gateway, GatewayError, SamplingParams};
use crate::metrics::{
    greedy_match_score, mcnemar_test, welch_t_test, EmbeddingProvider, MetricsError, ScoreTriple,
};
use crate::prompting::{Exemplar, PromptError, PromptMode, Prompter};
use crate::session::{ScenarioAgent, ScenarioKind, ScenarioOutcome, SessionError, SessionRunner};
use crate::transcript::{context_prefix, ContributionTag, DiscussionRecord, TranscriptError};

/// Column order for accuracy tables.
pub const CORPUS_COLUMNS: [&str; 5] = ["SNLI", "R1", "R2", "R3", "custom"];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("utterance {index} of {record} has no contribution tag")]
    UntaggedUtterance { record: String, index: usize },
    #[error("no problem with id {0:?}")]
    MissingProblem(String),
    #[error("nothing to evaluate")]
    NoItems,
    #[error("noise pool is empty")]
    EmptyPool,
    #[error("noise pool contains exemplar problem {0:?}")]
    PoolNotDisjoint(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Transcript(#[from] TranscriptError),
    #[error("worker pool: {0}")]
    Pool(String),
}

/// One prompting condition: a mode and the exemplars it shows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSetup {
    pub mode: PromptMode,
    pub exemplars: Vec<Exemplar>,
}

impl ModeSetup {
    pub fn new(mode: PromptMode, exemplars: Vec<Exemplar>) -> Self {
        let exemplars = if mode == PromptMode::ZeroShot { Vec::new() } else { exemplars };
        Self { mode, exemplars }
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(&self.exemplars).expect("exemplars serialize");
        hex::encode(Sha256::digest(json))
    }
}

pub struct EvalContext {
    pub gateway: Arc<Gateway>,
    pub prompter: Prompter,
    pub params: SamplingParams,
    pub seed: u64,
    /// Worker threads; 0 uses rayon's default.
    pub workers: usize,
}

impl EvalContext {
    pub fn new(gateway: Arc<Gateway>, params: SamplingParams, seed: u64) -> Self {
        Self { gateway, prompter: Prompter::default(), params, seed, workers: 0 }
    }

    /// Sampling parameters with the run seed filled in.
    pub fn effective_params(&self) -> SamplingParams {
        SamplingParams { seed: self.params.seed.or(Some(self.seed)), ..self.params.clone() }
    }

    fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> Result<R, HarnessError> {
        if self.workers == 0 {
            return Ok(f());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| HarnessError::Pool(e.to_string()))?;
        Ok(pool.install(f))
    }

    fn metadata(&self, setups: &[ModeSetup], items: usize, failures: usize) -> RunMetadata {
        RunMetadata {
            seed: self.seed,
            backend: self.gateway.backend_id().to_string(),
            params: self.effective_params(),
            modes: setups.iter().map(|s| s.mode.as_str().to_string()).collect(),
            exemplar_fingerprints: setups.iter().map(ModeSetup::fingerprint).collect(),
            items,
            failures,
            embedder: None,
        }
    }
}

fn text_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn accuracy(correct: &[bool]) -> Option<f64> {
    (!correct.is_empty()).then(|| correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64)
}

/// Every utterance must carry a tag before generation scoring.
pub fn check_tagged(records: &[DiscussionRecord]) -> Result<(), HarnessError> {
    for r in records {
        if let Some(u) = r.utterances.iter().find(|u| u.tag.is_none()) {
            return Err(HarnessError::UntaggedUtterance { record: r.problem_id.clone(), index: u.index });
        }
    }
    Ok(())
}

/// `(record, utterance)` positions scored by the generation experiment.
pub fn generation_targets(records: &[DiscussionRecord]) -> Vec<(usize, usize)> {
    records
        .iter()
        .enumerate()
        .flat_map(|(r, rec)| {
            rec.utterances
                .iter()
                .filter(|u| matches!(u.tag, Some(ContributionTag::Supportive | ContributionTag::Unsupportive)))
                .map(move |u| (r, u.index))
        })
        .collect()
}

struct Sampled {
    texts: Result<Vec<String>, String>,
    prompt: String,
}

/// Score generated continuations against the human utterances they replace.
pub fn eval_generation(
    ctx: &EvalContext,
    records: &[DiscussionRecord],
    problems: &HashMap<String, NLIProblem>,
    setups: &[ModeSetup],
    embedder: &dyn EmbeddingProvider,
) -> Result<EvalReport, HarnessError> {
    check_tagged(records)?;
    for r in records {
        if !problems.contains_key(&r.problem_id) {
            return Err(HarnessError::MissingProblem(r.problem_id.clone()));
        }
    }
    let targets = generation_targets(records);
    if targets.is_empty() || setups.is_empty() {
        return Err(HarnessError::NoItems);
    }
    let params = ctx.effective_params();
    let n = params.n_samples;

    let mut table = Table::new(vec!["supportive".into(), "unsupportive".into(), "diff".into()], 1);
    let mut significance = Vec::new();
    let mut notes = Vec::new();
    let mut items = Vec::new();
    let mut trace = Vec::new();
    let mut failures = 0;

    for setup in setups {
        let row = setup.mode.row_label().to_string();
        let sampled: Vec<Result<Sampled, HarnessError>> = ctx.install(|| {
            targets
                .par_iter()
                .map(|&(r, k)| {
                    let rec = &records[r];
                    let problem = &problems[&rec.problem_id];
                    let prefix = context_prefix(rec, k)?;
                    let prompt = ctx.prompter.render_generation_prompt(
                        setup.mode,
                        &setup.exemplars,
                        problem,
                        rec.label_pair(),
                        &prefix,
                        rec.utterances[k].speaker,
                    )?;
                    let texts = (0..n)
                        .map(|i| ctx.gateway.complete_sample(&prompt, &params, i).map(|c| c.text.trim().to_string()))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|e| e.to_string());
                    Ok(Sampled { texts, prompt: prompt.fingerprint })
                })
                .collect()
        })?;

        // One embedding batch per mode: references first, then candidates.
        let mut batch: Vec<String> = targets
            .iter()
            .map(|&(r, k)| records[r].utterances[k].text.clone())
            .collect();
        let mut per_item = Vec::with_capacity(targets.len());
        for (&(r, k), s) in targets.iter().zip(sampled) {
            let s = s?;
            let item = format!("{}/{k}", records[r].problem_id);
            match &s.texts {
                Ok(texts) => {
                    for (i, t) in texts.iter().enumerate() {
                        trace.push(TraceEntry {
                            row: row.clone(),
                            item: item.clone(),
                            sample: i,
                            prompt: s.prompt.clone(),
                            completion: Some(text_hash(t)),
                        });
                    }
                    per_item.push(Some(batch.len()));
                    batch.extend(texts.iter().cloned());
                }
                Err(e) => {
                    failures += 1;
                    notes.push(format!("{row} {item}: generation failed: {e}"));
                    trace.push(TraceEntry { row: row.clone(), item, sample: 0, prompt: s.prompt, completion: None });
                    per_item.push(None);
                }
            }
        }
        let embedded = embedder.embed(&batch)?;

        let mut sup = vec![Vec::new(); n];
        let mut unsup = vec![Vec::new(); n];
        let (mut all_sup, mut all_unsup) = (Vec::new(), Vec::new());
        for (t, (&(r, k), start)) in targets.iter().zip(&per_item).enumerate() {
            let Some(start) = *start else { continue };
            let utt = &records[r].utterances[k];
            let Some(reference) = &embedded[t] else {
                notes.push(format!("{row} {}/{k}: reference has no tokens", records[r].problem_id));
                continue;
            };
            let mut f1 = Vec::with_capacity(n);
            for i in 0..n {
                let score = match &embedded[start + i] {
                    Some(c) => greedy_match_score(c, reference)?,
                    None => ScoreTriple::ZERO,
                };
                f1.push(score.f1);
            }
            let tag = utt.tag.expect("targets are tagged");
            let (per_sample, all) = match tag {
                ContributionTag::Supportive => (&mut sup, &mut all_sup),
                _ => (&mut unsup, &mut all_unsup),
            };
            for (i, v) in f1.iter().enumerate() {
                per_sample[i].push(*v);
            }
            all.extend(f1.iter().copied());
            items.push(GenerationItem { row: row.clone(), problem_id: records[r].problem_id.clone(), index: k, tag, f1 });
        }

        let s_mean = mean(&all_sup);
        let u_mean = mean(&all_unsup);
        let diff = s_mean.zip(u_mean).map(|(s, u)| s - u);
        table.push(row.clone(), vec![s_mean, u_mean, diff]);

        // Ten per-sample-index means per tag, compared between tags.
        let s_means: Vec<f64> = sup.iter().filter_map(|v| mean(v)).collect();
        let u_means: Vec<f64> = unsup.iter().filter_map(|v| mean(v)).collect();
        match welch_t_test(&s_means, &u_means) {
            Ok(result) => {
                if result.significant {
                    for col in ["supportive", "unsupportive"] {
                        table.cell_mut(&row, col).expect("cell").mark(Mark::Significant);
                    }
                }
                significance.push(Significance {
                    row: row.clone(),
                    column: "diff".into(),
                    comparison: "supportive vs unsupportive per-sample means".into(),
                    result,
                });
            }
            Err(e) => notes.push(format!("{row}: no t-test: {e}")),
        }
    }
    table.mark_column_extremes(true);
    let mut metadata = ctx.metadata(setups, targets.len(), failures);
    metadata.embedder = Some(embedder.id().to_string());
    Ok(EvalReport {
        kind: ReportKind::Generation,
        table,
        significance,
        metadata,
        notes,
        items: ReportItems::Generation(items),
        trace,
    })
}

/// Seeded half/half split of problem indices into planned scenario kinds.
pub fn partition_scenarios(n: usize, seed: u64) -> Vec<ScenarioKind> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut kinds = vec![ScenarioKind::Objection; n];
    for &i in &idx[..n.div_ceil(2)] {
        kinds[i] = ScenarioKind::Acceptance;
    }
    kinds
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRates {
    pub acceptance: Option<f64>,
    pub objection: Option<f64>,
    pub before: Option<f64>,
    pub after: Option<f64>,
}

/// Rates over a batch of outcomes.
pub fn scenario_rates(outcomes: &[ScenarioOutcome]) -> ScenarioRates {
    let rate = |kind| {
        let ok: Vec<bool> = outcomes.iter().filter(|o| o.kind == kind).map(|o| o.success).collect();
        accuracy(&ok)
    };
    let before: Vec<bool> = outcomes.iter().map(|o| o.initial_label == o.gold_label).collect();
    let after: Vec<bool> = outcomes.iter().map(|o| o.final_label == o.gold_label).collect();
    ScenarioRates {
        acceptance: rate(ScenarioKind::Acceptance),
        objection: rate(ScenarioKind::Objection),
        before: accuracy(&before),
        after: accuracy(&after),
    }
}

/// Acceptance/objection scenarios. Returns the rate report and the
/// before/after accuracy report built from the same runs.
pub fn eval_scenarios(
    ctx: &EvalContext,
    problems: &[NLIProblem],
    setups: &[ModeSetup],
    agent: &dyn ScenarioAgent,
    turn_budget: usize,
) -> Result<(EvalReport, EvalReport), HarnessError> {
    if problems.is_empty() || setups.is_empty() {
        return Err(HarnessError::NoItems);
    }
    let planned = partition_scenarios(problems.len(), ctx.seed);
    let runner = SessionRunner::new(ctx.gateway.clone(), ctx.effective_params())
        .with_prompter(ctx.prompter.clone())
        .without_timestamps();

    let mut rates = Table::new(vec!["Acceptance rate".into(), "Objection rate".into()], 1);
    let mut before_after = Table::new(vec!["Before".into(), "After".into()], 1);
    let mut significance = Vec::new();
    let mut notes = Vec::new();
    let mut all = Vec::new();
    let mut trace = Vec::new();
    let mut failures = 0;

    for setup in setups {
        let row = setup.mode.row_label().to_string();
        let runs: Vec<_> = ctx.install(|| {
            problems
                .par_iter()
                .zip(&planned)
                .map(|(p, &kind)| runner.run_scenario(p, kind, agent, setup.mode, &setup.exemplars, turn_budget))
                .collect()
        })?;
        let mut outcomes = Vec::new();
        for (p, run) in problems.iter().zip(runs) {
            match run {
                Ok(run) => {
                    let o = run.outcome;
                    if o.kind_mismatch {
                        notes.push(format!(
                            "{row} {}: planned {} but initial label {} forces {}",
                            o.problem_id,
                            o.planned_kind.as_str(),
                            o.initial_label,
                            o.kind.as_str()
                        ));
                    }
                    if o.budget_exhausted {
                        notes.push(format!("{row} {}: turn budget exhausted", o.problem_id));
                    }
                    let turn_hash = text_hash(&serde_json::to_string(&run.state.history).expect("history serializes"));
                    trace.push(TraceEntry {
                        row: row.clone(),
                        item: o.problem_id.clone(),
                        sample: 0,
                        prompt: run.state.base_prompt.fingerprint.clone(),
                        completion: Some(turn_hash),
                    });
                    outcomes.push(o);
                }
                Err(e) => {
                    failures += 1;
                    notes.push(format!("{row} {}: scenario failed: {e}", p.id));
                }
            }
        }
        let r = scenario_rates(&outcomes);
        rates.push(row.clone(), vec![r.acceptance, r.objection]);
        before_after.push(row.clone(), vec![r.before, r.after]);

        let before: Vec<bool> = outcomes.iter().map(|o| o.initial_label == o.gold_label).collect();
        let after: Vec<bool> = outcomes.iter().map(|o| o.final_label == o.gold_label).collect();
        let (b, c) = crate::metrics::discordant_pairs(&before, &after);
        let result = mcnemar_test(b, c);
        if result.significant {
            before_after.cell_mut(&row, "After").expect("cell").mark(Mark::Significant);
        }
        significance.push(Significance {
            row: row.clone(),
            column: "After".into(),
            comparison: "before vs after correctness".into(),
            result,
        });
        all.extend(outcomes.into_iter().map(|o| (row.clone(), o)));
    }
    rates.mark_column_extremes(true);
    before_after.mark_column_extremes(true);

    let metadata = ctx.metadata(setups, problems.len(), failures);
    let scenario = EvalReport {
        kind: ReportKind::Scenario,
        table: rates,
        significance: Vec::new(),
        metadata: metadata.clone(),
        notes: notes.clone(),
        items: ReportItems::Scenario(all.clone()),
        trace: trace.clone(),
    };
    let ba = EvalReport {
        kind: ReportKind::BeforeAfter,
        table: before_after,
        significance,
        metadata,
        notes,
        items: ReportItems::Scenario(all),
        trace,
    };
    Ok((scenario, ba))
}

fn present_columns(problems: &[NLIProblem]) -> Vec<String> {
    CORPUS_COLUMNS
        .iter()
        .filter(|c| problems.iter().any(|p| p.source.column() == **c))
        .map(|c| c.to_string())
        .collect()
}

struct NliRun {
    items: Vec<NliItem>,
    trace: Vec<TraceEntry>,
    notes: Vec<String>,
    failures: usize,
}

fn run_nli(ctx: &EvalContext, problems: &[NLIProblem], setup: &ModeSetup, row: &str) -> Result<NliRun, HarnessError> {
    let params = ctx.effective_params().single();
    let results: Vec<Result<(String, Result<String, String>), HarnessError>> = ctx.install(|| {
        problems
            .par_iter()
            .map(|p| {
                let prompt = ctx.prompter.render_task_prompt(setup.mode, &setup.exemplars, p)?;
                let text = ctx.gateway.complete_sample(&prompt, &params, 0).map(|c| c.text).map_err(|e| e.to_string());
                Ok((prompt.fingerprint, text))
            })
            .collect()
    })?;
    let mut run = NliRun { items: Vec::new(), trace: Vec::new(), notes: Vec::new(), failures: 0 };
    for (p, res) in problems.iter().zip(results) {
        let (fp, text) = res?;
        let predicted = match &text {
            Ok(t) => match parse_label(t) {
                Ok(l) => Some(l),
                Err(e) => {
                    run.notes.push(format!("{row} {}: abstention: {e}", p.id));
                    None
                }
            },
            Err(e) => {
                run.failures += 1;
                run.notes.push(format!("{row} {}: abstention: {e}", p.id));
                None
            }
        };
        run.trace.push(TraceEntry {
            row: row.to_string(),
            item: p.id.clone(),
            sample: 0,
            prompt: fp,
            completion: text.ok().map(|t| text_hash(&t)),
        });
        run.items.push(NliItem {
            row: row.to_string(),
            problem_id: p.id.clone(),
            column: p.source.column().to_string(),
            gold: p.gold_label,
            predicted,
        });
    }
    Ok(run)
}

fn correctness(items: &[NliItem], column: &str) -> Vec<bool> {
    items.iter().filter(|i| i.column == column).map(|i| i.predicted == Some(i.gold)).collect()
}

/// Single-sample accuracy per corpus column. Unparseable or failed answers
/// count as incorrect.
pub fn eval_nli(ctx: &EvalContext, problems: &[NLIProblem], setups: &[ModeSetup]) -> Result<EvalReport, HarnessError> {
    if problems.is_empty() || setups.is_empty() {
        return Err(HarnessError::NoItems);
    }
    let columns = present_columns(problems);
    let mut table = Table::new(columns.clone(), 2);
    let mut runs = Vec::new();
    for setup in setups {
        let row = setup.mode.row_label();
        let run = run_nli(ctx, problems, setup, row)?;
        table.push(row, columns.iter().map(|c| accuracy(&correctness(&run.items, c))).collect());
        runs.push((row, run));
    }
    table.mark_column_extremes(true);

    // Pairwise McNemar between modes, per column. A cell is marked when its
    // mode differs significantly from every other mode and is the best.
    let mut significance = Vec::new();
    for c in &columns {
        for i in 0..runs.len() {
            for j in i + 1..runs.len() {
                let (b, cc) = crate::metrics::discordant_pairs(&correctness(&runs[i].1.items, c), &correctness(&runs[j].1.items, c));
                significance.push(Significance {
                    row: format!("{} vs {}", runs[i].0, runs[j].0),
                    column: c.clone(),
                    comparison: "paired correctness".into(),
                    result: mcnemar_test(b, cc),
                });
            }
        }
    }
    if runs.len() > 1 {
        for c in &columns {
            for (r, _) in &runs {
                let beats_all = significance
                    .iter()
                    .filter(|s| &s.column == c && s.row.split(" vs ").any(|x| x == *r))
                    .all(|s| s.result.significant);
                let cell = table.cell_mut(r, c).expect("cell");
                if beats_all && cell.marks.contains(&Mark::Best) {
                    cell.mark(Mark::Significant);
                }
            }
        }
    }

    let failures = runs.iter().map(|(_, r)| r.failures).sum();
    let mut notes = Vec::new();
    let mut items = Vec::new();
    let mut trace = Vec::new();
    for (_, run) in runs {
        notes.extend(run.notes);
        items.extend(run.items);
        trace.extend(run.trace);
    }
    Ok(EvalReport {
        kind: ReportKind::NliAccuracy,
        table,
        significance,
        metadata: ctx.metadata(setups, problems.len(), failures),
        notes,
        items: ReportItems::Nli(items),
        trace,
    })
}

/// Few-shot-discussion accuracy with noisy exemplars minus the clean
/// accuracy, per noise spec and corpus column.
pub fn eval_ablation(
    ctx: &EvalContext,
    problems: &[NLIProblem],
    exemplars: &[Exemplar],
    specs: &[NoiseSpec],
    pool: &[DiscussionRecord],
) -> Result<EvalReport, HarnessError> {
    if problems.is_empty() || specs.is_empty() {
        return Err(HarnessError::NoItems);
    }
    let columns = present_columns(problems);
    let clean_setup = ModeSetup::new(PromptMode::FewShotDiscussion, exemplars.to_vec());
    let clean = run_nli(ctx, problems, &clean_setup, "clean")?;
    let clean_acc: Vec<Option<f64>> = columns.iter().map(|c| accuracy(&correctness(&clean.items, c))).collect();

    let mut table = Table::new(columns.clone(), 2);
    let mut setups = vec![clean_setup.clone()];
    let mut notes = clean.notes;
    let mut items = clean.items;
    let mut trace = clean.trace;
    let mut failures = clean.failures;
    for spec in specs {
        let row = spec.kind.row_label();
        let noisy = apply_noise(exemplars, *spec, pool)?;
        notes.extend(noisy.skipped.iter().map(|s| format!("{row} {s}")));
        let setup = ModeSetup::new(PromptMode::FewShotDiscussion, noisy.exemplars);
        let run = run_nli(ctx, problems, &setup, row)?;
        let deltas = columns
            .iter()
            .zip(&clean_acc)
            .map(|(c, base)| accuracy(&correctness(&run.items, c)).zip(*base).map(|(n, b)| n - b))
            .collect();
        table.push(row, deltas);
        setups.push(setup);
        notes.extend(run.notes);
        items.extend(run.items);
        trace.extend(run.trace);
        failures += run.failures;
    }
    // Most negative difference per column is the strongest noise.
    table.mark_column_extremes(false);
    let mut metadata = ctx.metadata(&setups, problems.len(), failures);
    metadata.modes = std::iter::once("clean".to_string())
        .chain(specs.iter().map(|s| format!("{}:{}", s.kind.as_str(), s.seed)))
        .collect();
    Ok(EvalReport {
        kind: ReportKind::Ablation,
        table,
        significance: Vec::new(),
        metadata,
        notes,
        items: ReportItems::Nli(items),
        trace,
    })
}
