//! Experiment runs with an output directory, a manifest, and offline replay.
//!
//! Layout of an output directory:
//!
//! ```text
//! manifest.json
//! reports/            report JSON and text, pseudo-generation output
//! artifacts/cache/    completion cache (content addressed)
//! artifacts/prompts/  every prompt text, named by fingerprint
//! artifacts/inputs/   copies of the input files the run read
//! ```
//!
//! A replay points the offline backend at `artifacts/cache`, reloads the
//! copied inputs, and re-renders every report. Any cache miss is an error,
//! so a replay never talks to a live backend.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{BackendKind, Config, ConfigError};
use crate::corpus::{filter_three_of_five, load_corpus_with, sample_problems, NLIProblem, Source, Split};
use crate::gateway::{stable_hash, UsageReport};
use crate::harness::{
    eval_ablation, eval_generation, eval_nli, eval_scenarios, EvalContext, EvalReport, HarnessError, ModeSetup,
    NoiseKind, NoiseSpec,
};
use crate::prompting::{Exemplar, PromptMode};
use crate::pseudogen::{finetune_jsonl, finetune_lines, finetune_meta_json, generate_batch, PseudoBatch};
use crate::session::ScriptedAgent;
use crate::transcript::{read_records, records_to_jsonl, DiscussionRecord};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("{0}")]
    Input(String),
    #[error("io: {0}")]
    Io(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RunError + '_ {
    move |e| RunError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "kebab-case")]
pub enum Experiment {
    Nli {
        modes: Vec<PromptMode>,
        corpora: Vec<Source>,
        /// Seeded subsample per corpus.
        #[serde(default)]
        limit: Option<usize>,
    },
    Generation {
        modes: Vec<PromptMode>,
    },
    Scenarios {
        modes: Vec<PromptMode>,
        corpus: Source,
        n: usize,
        filter_three_of_five: bool,
    },
    Ablation {
        noise: Vec<NoiseKind>,
        corpora: Vec<Source>,
        #[serde(default)]
        limit: Option<usize>,
    },
    Pseudogen {
        n: usize,
        corpus: Source,
    },
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Nli { .. } => "nli",
            Experiment::Generation { .. } => "generation",
            Experiment::Scenarios { .. } => "scenarios",
            Experiment::Ablation { .. } => "ablation",
            Experiment::Pseudogen { .. } => "pseudogen",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputFile {
    pub original: PathBuf,
    /// Path of the copy, relative to the output directory.
    pub stored: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub experiment: Experiment,
    pub seed: u64,
    pub backend_id: String,
    /// Absolutized config as the run saw it. Secrets are never serialized.
    pub config: Config,
    pub inputs: BTreeMap<String, InputFile>,
    /// SHA-256 of every file under `reports/`, keyed by relative path.
    pub reports: BTreeMap<String, String>,
    pub usage: UsageReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replayed_from: Option<PathBuf>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, RunError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(|e| RunError::Manifest(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone)]
pub struct RunPaths {
    pub out: PathBuf,
    /// Defaults to `<out>/artifacts/cache`.
    pub cache_dir: Option<PathBuf>,
}

impl RunPaths {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into(), cache_dir: None }
    }

    fn cache(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.out.join("artifacts").join("cache"))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: Manifest,
    /// Files written under `reports/`, keyed by path relative to `out`.
    pub files: BTreeMap<String, Vec<u8>>,
    /// Item failures summed over every report.
    pub failures: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Input files of a config, keyed by role.
fn input_files(cfg: &Config) -> BTreeMap<String, PathBuf> {
    let mut m = BTreeMap::new();
    for (name, p) in &cfg.data.corpora {
        m.insert(format!("corpus-{name}"), cfg.resolve(p));
    }
    let d = &cfg.data;
    for (key, p) in [
        ("discussion-problems", &d.discussion_problems),
        ("discussions", &d.discussions),
        ("exemplars", &d.exemplars),
        ("noise-pool", &d.noise_pool),
    ] {
        if let Some(p) = p {
            m.insert(key.to_string(), cfg.resolve(p));
        }
    }
    if cfg.backend.kind == BackendKind::Scripted {
        if let Some(p) = &cfg.backend.script {
            m.insert("mock-script".to_string(), cfg.resolve(p));
        }
    }
    m
}

fn set_input_path(cfg: &mut Config, key: &str, path: PathBuf) {
    if let Some(name) = key.strip_prefix("corpus-") {
        cfg.data.corpora.insert(name.to_string(), path);
        return;
    }
    let slot = match key {
        "discussion-problems" => &mut cfg.data.discussion_problems,
        "discussions" => &mut cfg.data.discussions,
        "exemplars" => &mut cfg.data.exemplars,
        "noise-pool" => &mut cfg.data.noise_pool,
        "mock-script" => &mut cfg.backend.script,
        _ => return,
    };
    *slot = Some(path);
}

fn copy_inputs(cfg: &Config, out: &Path) -> Result<BTreeMap<String, InputFile>, RunError> {
    let dir = out.join("artifacts").join("inputs");
    let mut inputs = BTreeMap::new();
    for (key, path) in input_files(cfg) {
        if !path.exists() {
            continue;
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let file = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        let stored = format!("artifacts/inputs/{key}-{file}");
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let dest = out.join(&stored);
        fs::write(&dest, &bytes).map_err(io_err(&dest))?;
        inputs.insert(key, InputFile { original: path, stored, sha256: sha256_hex(&bytes) });
    }
    Ok(inputs)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf, RunError> {
    p.as_ref().ok_or_else(|| RunError::Input(format!("config has no data.{what}")))
}

/// Problems of one corpus. When split annotations exist, only the
/// evaluation split is used.
pub fn load_eval_problems(cfg: &Config, source: Source, limit: Option<usize>) -> Result<Vec<NLIProblem>, RunError> {
    let path = cfg
        .corpus_path(source)
        .ok_or_else(|| RunError::Input(format!("config has no data.corpora.{source}")))?;
    let loaded = load_corpus_with(&path, source, &cfg.data.fields).map_err(|e| RunError::Input(e.to_string()))?;
    let mut problems = loaded.problems;
    if problems.iter().any(|p| p.split.is_some()) {
        problems.retain(|p| p.split == Some(Split::Evaluation));
    }
    match limit {
        Some(n) if n < problems.len() => {
            sample_problems(&problems, n, stable_hash(cfg.seed, &["limit", source.as_str()]))
                .map_err(|e| RunError::Input(e.to_string()))
        }
        _ => Ok(problems),
    }
}

/// JSONL of `{problem, discussion}` objects.
pub fn load_exemplars(path: &Path) -> Result<Vec<Exemplar>, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| RunError::Input(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn config_exemplars(cfg: &Config, needed: bool) -> Result<Vec<Exemplar>, RunError> {
    match &cfg.data.exemplars {
        Some(p) => load_exemplars(&cfg.resolve(p)),
        None if needed => Err(RunError::Input("config has no data.exemplars".into())),
        None => Ok(Vec::new()),
    }
}

fn setups(cfg: &Config, modes: &[PromptMode]) -> Result<Vec<ModeSetup>, RunError> {
    let needed = modes.iter().any(|m| *m != PromptMode::ZeroShot);
    let exemplars = config_exemplars(cfg, needed)?;
    Ok(modes.iter().map(|m| ModeSetup::new(*m, exemplars.clone())).collect())
}

fn load_records(cfg: &Config, path: &Option<PathBuf>, what: &str) -> Result<Vec<DiscussionRecord>, RunError> {
    read_records(&cfg.resolve(required(path, what)?)).map_err(|e| RunError::Input(e.to_string()))
}

fn report_files(files: &mut BTreeMap<String, Vec<u8>>, report: &EvalReport) {
    let stem = report.kind.as_str();
    files.insert(format!("reports/{stem}.json"), report.to_json().into_bytes());
    files.insert(format!("reports/{stem}.txt"), report.to_text().into_bytes());
}

#[derive(Serialize)]
struct PseudoSummary<'a> {
    backend: &'a str,
    seed: u64,
    stats: &'a crate::pseudogen::BatchStats,
    rejects: &'a [crate::pseudogen::Reject],
    warnings: &'a [String],
}

fn pseudogen_files(
    files: &mut BTreeMap<String, Vec<u8>>,
    batch: &PseudoBatch,
    problems: &[NLIProblem],
    cfg: &Config,
    backend: &str,
) -> Result<(), RunError> {
    let by_id: HashMap<String, NLIProblem> = problems.iter().map(|p| (p.id.clone(), p.clone())).collect();
    let lines = finetune_lines(&batch.records, &by_id, &cfg.prompter()).map_err(|e| RunError::Input(e.to_string()))?;
    let summary = PseudoSummary {
        backend,
        seed: cfg.seed,
        stats: &batch.stats,
        rejects: &batch.rejects,
        warnings: &batch.warnings,
    };
    files.insert(
        "reports/pseudogen.json".into(),
        (serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n").into_bytes(),
    );
    files.insert("reports/pseudo_records.jsonl".into(), records_to_jsonl(&batch.records).into_bytes());
    files.insert("reports/finetune.jsonl".into(), finetune_jsonl(&lines).into_bytes());
    files.insert("reports/finetune.jsonl.meta.json".into(), finetune_meta_json(lines.len()).into_bytes());
    Ok(())
}

/// Run `experiment`, write reports, artifacts, and the manifest under
/// `paths.out`.
pub fn execute(config: &Config, experiment: &Experiment, paths: &RunPaths) -> Result<RunOutcome, RunError> {
    let mut cfg = config.clone();
    cfg.absolutize();
    let out = &paths.out;
    fs::create_dir_all(out.join("reports")).map_err(io_err(out))?;
    let inputs = copy_inputs(&cfg, out)?;

    let run_id = experiment.name();
    let gateway = Arc::new(
        cfg.build_gateway(Some(&paths.cache()))?.with_prompt_log(out.join("artifacts").join("prompts")),
    );
    gateway.start_run(run_id);
    let backend_id = gateway.backend_id().to_string();
    let ctx = EvalContext {
        gateway: gateway.clone(),
        prompter: cfg.prompter(),
        params: cfg.sampling.clone(),
        seed: cfg.seed,
        workers: cfg.workers,
    };

    let mut files = BTreeMap::new();
    let mut reports = Vec::new();
    let mut rejected = 0;
    match experiment {
        Experiment::Nli { modes, corpora, limit } => {
            let mut problems = Vec::new();
            for c in corpora {
                problems.extend(load_eval_problems(&cfg, *c, *limit)?);
            }
            reports.push(eval_nli(&ctx, &problems, &setups(&cfg, modes)?)?);
        }
        Experiment::Generation { modes } => {
            let mut records = load_records(&cfg, &cfg.data.discussions, "discussions")?;
            if records.iter().any(|r| r.split.is_some()) {
                records.retain(|r| r.split == Some(Split::Validation));
            }
            let path = cfg.resolve(required(&cfg.data.discussion_problems, "discussion_problems")?);
            let problems: HashMap<String, NLIProblem> = load_corpus_with(&path, Source::SnliDev, &cfg.data.fields)
                .map_err(|e| RunError::Input(e.to_string()))?
                .problems
                .into_iter()
                .map(|p| (p.id.clone(), p))
                .collect();
            let embedder = cfg.build_embedder()?;
            reports.push(eval_generation(&ctx, &records, &problems, &setups(&cfg, modes)?, embedder.as_ref())?);
        }
        Experiment::Scenarios { modes, corpus, n, filter_three_of_five: filter } => {
            let mut problems = load_eval_problems(&cfg, *corpus, None)?;
            if *filter {
                problems = filter_three_of_five(&problems).kept;
            }
            let problems = sample_problems(&problems, *n, cfg.seed).map_err(|e| RunError::Input(e.to_string()))?;
            let agent = ScriptedAgent::new(cfg.session.agent_turns, cfg.seed);
            let (rates, before_after) =
                eval_scenarios(&ctx, &problems, &setups(&cfg, modes)?, &agent, cfg.session.turn_budget)?;
            reports.push(rates);
            reports.push(before_after);
        }
        Experiment::Ablation { noise, corpora, limit } => {
            let mut problems = Vec::new();
            for c in corpora {
                problems.extend(load_eval_problems(&cfg, *c, *limit)?);
            }
            let exemplars = config_exemplars(&cfg, true)?;
            let pool = if noise.contains(&NoiseKind::RandomDiscussion) {
                load_records(&cfg, &cfg.data.noise_pool, "noise_pool")?
            } else {
                Vec::new()
            };
            let specs: Vec<NoiseSpec> = noise.iter().map(|k| noise_spec(*k, cfg.seed)).collect();
            reports.push(eval_ablation(&ctx, &problems, &exemplars, &specs, &pool)?);
        }
        Experiment::Pseudogen { n, corpus } => {
            let problems = load_eval_problems(&cfg, *corpus, None)?;
            let problems = sample_problems(&problems, *n, cfg.seed).map_err(|e| RunError::Input(e.to_string()))?;
            let batch = generate_batch(&gateway, &ctx.prompter, &problems, &cfg.sampling, cfg.seed);
            pseudogen_files(&mut files, &batch, &problems, &cfg, &backend_id)?;
            rejected = batch.rejects.len();
        }
    }
    let failures = rejected + reports.iter().map(|r| r.metadata.failures).sum::<usize>();
    for r in &reports {
        report_files(&mut files, r);
    }
    for (rel, bytes) in &files {
        let path = out.join(rel);
        fs::write(&path, bytes).map_err(io_err(&path))?;
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        experiment: experiment.clone(),
        seed: cfg.seed,
        backend_id,
        config: cfg,
        inputs,
        reports: files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect(),
        usage: gateway.record_usage(run_id).map_err(|e| RunError::Io(e.to_string()))?,
        replayed_from: None,
    };
    write_manifest(out, &manifest)?;
    Ok(RunOutcome { manifest, files, failures })
}

/// Noise seeds derive from the run seed and the noise kind, so adding a
/// kind never changes the others.
pub fn noise_spec(kind: NoiseKind, seed: u64) -> NoiseSpec {
    NoiseSpec { kind, seed: stable_hash(seed, &["noise", kind.as_str()]) }
}

fn write_manifest(out: &Path, manifest: &Manifest) -> Result<(), RunError> {
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
    fs::write(&path, text).map_err(io_err(&path))
}

#[derive(Debug, Clone)]
pub struct ReplayOutcome {
    pub outcome: RunOutcome,
    /// Report paths whose hash differs from the recorded run, or that are
    /// missing from one side.
    pub mismatches: Vec<String>,
}

/// Re-render the reports of the run in `from` into `out` using only its
/// cached completions and copied inputs.
pub fn replay(from: &Path, out: &Path) -> Result<ReplayOutcome, RunError> {
    let recorded = Manifest::read(from)?;
    if recorded.version != MANIFEST_VERSION {
        return Err(RunError::Manifest(format!("unsupported manifest version {}", recorded.version)));
    }
    let mut cfg = recorded.config.clone();
    for (key, input) in &recorded.inputs {
        let stored = from.join(&input.stored);
        let bytes = fs::read(&stored).map_err(io_err(&stored))?;
        if sha256_hex(&bytes) != input.sha256 {
            return Err(RunError::Manifest(format!("input {key} does not match its recorded hash")));
        }
        set_input_path(&mut cfg, key, fs::canonicalize(&stored).map_err(io_err(&stored))?);
    }
    cfg.backend.kind = BackendKind::Offline;
    cfg.backend.offline_id = Some(recorded.backend_id.clone());
    cfg.backend.rate_limit = 0.0;

    let paths = RunPaths { out: out.to_path_buf(), cache_dir: Some(from.join("artifacts").join("cache")) };
    let mut outcome = execute(&cfg, &recorded.experiment, &paths)?;
    outcome.manifest.replayed_from = Some(from.to_path_buf());
    write_manifest(out, &outcome.manifest)?;

    let mut mismatches = Vec::new();
    for (k, sha) in &recorded.reports {
        if outcome.manifest.reports.get(k) != Some(sha) {
            mismatches.push(k.clone());
        }
    }
    for k in outcome.manifest.reports.keys() {
        if !recorded.reports.contains_key(k) {
            mismatches.push(k.clone());
        }
    }
    Ok(ReplayOutcome { outcome, mismatches })
}
