//! `nli-discuss`: corpora, experiments, pseudo-discussion generation,
//! scoring, the session service, and offline replay.
//!
//! Settings come from `--config FILE`, then the environment
//! (`NLI_DISCUSS_API_KEY`, `NLI_DISCUSS_SERVICE_TOKEN`,
//! `NLI_DISCUSS_ENDPOINT`), then flags; later sources win.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use discuss_core::config::{BackendKind, Config};
use discuss_core::corpus::{
    filter_three_of_five, load_corpus_with, sample_problems, to_jsonl, LabelDistribution, NLILabel, Source,
};
use discuss_core::harness::NoiseKind;
use discuss_core::metrics::greedy_match_score;
use discuss_core::prompting::PromptMode;
use discuss_core::runs::{execute, replay, Experiment, RunOutcome, RunPaths};
use discuss_core::transcript::{corpus_stats, read_records};

#[derive(Parser, Debug)]
#[command(name = "nli-discuss", version, about = "Human-system NLI discussion workbench")]
struct Cli {
    #[command(flatten)]
    global: GlobalOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalOpts {
    /// TOML config; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; also seeds the mock backend.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendArg>,
    /// Worker threads; 0 means one per core.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Requests per second across workers; 0 disables the limit.
    #[arg(long, global = true)]
    rate_limit: Option<f64>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum BackendArg {
    Mock,
    Scripted,
    Http,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Inspect and sample corpora.
    #[command(subcommand)]
    Corpus(CorpusCmd),
    /// Run an experiment and write reports.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Generate pseudo-discussions and a fine-tuning file.
    Pseudogen {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "snli-dev")]
        corpus: Source,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy matching score of a candidate against a reference.
    Score {
        #[arg(long, required_unless_present = "pairs")]
        candidate: Option<String>,
        #[arg(long, required_unless_present = "pairs")]
        reference: Option<String>,
        /// JSONL of `{candidate, reference}` objects.
        #[arg(long, conflicts_with_all = ["candidate", "reference"])]
        pairs: Option<PathBuf>,
    },
    /// Run the session service.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        event_log: Option<PathBuf>,
    },
    /// Re-render the reports of a previous run from its cached artifacts.
    Replay {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fail when any report differs from the recorded run.
        #[arg(long)]
        verify: bool,
    },
}

#[derive(Subcommand, Debug)]
enum CorpusCmd {
    /// Seeded sample of problems, as JSONL.
    Sample {
        #[arg(long, default_value = "snli-dev")]
        corpus: Source,
        #[arg(long, value_enum)]
        filter: Option<FilterArg>,
        #[arg(long)]
        n: usize,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Counts and label distributions of corpora and discussion records.
    Stats {
        /// Corpora to describe; all configured ones when absent.
        #[arg(long = "corpus")]
        corpora: Vec<Source>,
        /// Discussion records to describe instead of the configured ones.
        #[arg(long)]
        discussions: Option<PathBuf>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum FilterArg {
    ThreeOfFive,
}

#[derive(Args, Debug, Clone)]
struct ModeOpts {
    /// Prompting modes; all three when absent.
    #[arg(long = "mode")]
    modes: Vec<PromptMode>,
}

impl ModeOpts {
    fn resolve(&self) -> Vec<PromptMode> {
        if self.modes.is_empty() {
            PromptMode::ALL.to_vec()
        } else {
            self.modes.clone()
        }
    }
}

#[derive(Args, Debug, Clone)]
struct CorporaOpts {
    /// Corpora to evaluate; all configured ones when absent.
    #[arg(long = "corpus")]
    corpora: Vec<Source>,
    /// Seeded subsample size per corpus.
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum EvalCmd {
    /// Accuracy per corpus and prompting mode.
    Nli {
        #[command(flatten)]
        modes: ModeOpts,
        #[command(flatten)]
        corpora: CorporaOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Similarity of generated and human utterances.
    Generation {
        #[command(flatten)]
        modes: ModeOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Acceptance and objection scenarios with a scripted human.
    Scenarios {
        #[arg(long = "mode", default_value = "few-shot-discussion")]
        modes: Vec<PromptMode>,
        #[arg(long, default_value = "snli-dev")]
        corpus: Source,
        #[arg(long, default_value_t = 140)]
        n: usize,
        #[arg(long, value_enum)]
        filter: Option<FilterArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Few-shot-discussion accuracy with noisy exemplars.
    Ablation {
        /// Noise kinds; all three when absent.
        #[arg(long = "noise")]
        noise: Vec<NoiseKind>,
        #[command(flatten)]
        corpora: CorporaOpts,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(g: &GlobalOpts) -> Result<Config> {
    let mut cfg = match &g.config {
        Some(p) => Config::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Config { base_dir: std::env::current_dir()?, ..Config::default() },
    };
    cfg.apply_env();
    if let Some(s) = g.seed {
        cfg.seed = s;
        cfg.backend.seed = s;
    }
    if let Some(b) = g.backend {
        cfg.backend.kind = match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Scripted => BackendKind::Scripted,
            BackendArg::Http => BackendKind::Http,
        };
    }
    if let Some(w) = g.workers {
        cfg.workers = w;
    }
    if let Some(r) = g.rate_limit {
        cfg.backend.rate_limit = r;
    }
    Ok(cfg)
}

fn configured_corpora(cfg: &Config, requested: &[Source]) -> Result<Vec<Source>> {
    if !requested.is_empty() {
        return Ok(requested.to_vec());
    }
    let all: Vec<Source> = cfg.data.corpora.keys().map(|k| k.parse()).collect::<Result<_, String>>().map_err(anyhow::Error::msg)?;
    if all.is_empty() {
        bail!("no corpora configured; pass --corpus or set data.corpora");
    }
    Ok(all)
}

fn print_outcome(outcome: &RunOutcome, out: &Path) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    for (rel, bytes) in &outcome.files {
        if rel.ends_with(".txt") {
            stdout.write_all(bytes)?;
            writeln!(stdout)?;
        }
    }
    writeln!(stdout, "wrote {} report files under {}", outcome.files.len(), out.join("reports").display())?;
    if outcome.failures > 0 {
        eprintln!("partial failure: {} items failed; see report notes", outcome.failures);
    }
    Ok(())
}

fn run_experiment(cfg: &Config, experiment: Experiment, out: &Path) -> Result<()> {
    let outcome = execute(cfg, &experiment, &RunPaths::new(out))?;
    print_outcome(&outcome, out)
}

#[derive(Serialize)]
struct CorpusSummary {
    problems: usize,
    labels: BTreeMap<String, usize>,
    skipped_no_consensus: usize,
    nonstandard_annotations: usize,
    with_annotations: usize,
    three_of_five: usize,
}

#[derive(Deserialize)]
struct Pair {
    candidate: String,
    reference: String,
}

fn corpus_cmd(cfg: &Config, cmd: CorpusCmd) -> Result<()> {
    match cmd {
        CorpusCmd::Sample { corpus, filter, n, out } => {
            let path = cfg.corpus_path(corpus).with_context(|| format!("no data.corpora.{corpus} in config"))?;
            let mut problems = load_corpus_with(&path, corpus, &cfg.data.fields)?.problems;
            if filter == Some(FilterArg::ThreeOfFive) {
                let outcome = filter_three_of_five(&problems);
                if outcome.missing_annotations > 0 {
                    eprintln!("{} problems have no five-label annotation and were skipped", outcome.missing_annotations);
                }
                problems = outcome.kept;
            }
            let picked = sample_problems(&problems, n, cfg.seed)?;
            let text = to_jsonl(&picked);
            match out {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
        }
        CorpusCmd::Stats { corpora, discussions } => {
            let mut report = serde_json::Map::new();
            let sources = if corpora.is_empty() && discussions.is_some() {
                Vec::new()
            } else {
                configured_corpora(cfg, &corpora)?
            };
            for source in sources {
                let path = cfg.corpus_path(source).with_context(|| format!("no data.corpora.{source} in config"))?;
                let loaded = load_corpus_with(&path, source, &cfg.data.fields)?;
                let golds: Vec<NLILabel> = loaded.problems.iter().map(|p| p.gold_label).collect();
                let dist = LabelDistribution::from_labels(&golds);
                let summary = CorpusSummary {
                    problems: loaded.problems.len(),
                    labels: NLILabel::ALL.iter().map(|l| (l.as_str().to_string(), dist.count(*l))).collect(),
                    skipped_no_consensus: loaded.skipped_no_consensus,
                    nonstandard_annotations: loaded.nonstandard_annotations,
                    with_annotations: loaded.problems.iter().filter(|p| p.annotator_labels.is_some()).count(),
                    three_of_five: filter_three_of_five(&loaded.problems).kept.len(),
                };
                report.insert(source.as_str().to_string(), serde_json::to_value(summary)?);
            }
            let records_path = discussions.or_else(|| cfg.data.discussions.as_ref().map(|p| cfg.resolve(p)));
            if let Some(p) = records_path {
                let records = read_records(&p)?;
                report.insert("discussions".into(), serde_json::to_value(corpus_stats(&records))?);
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn score_cmd(cfg: &Config, candidate: Option<String>, reference: Option<String>, pairs: Option<PathBuf>) -> Result<()> {
    let embedder = cfg.build_embedder()?;
    let pairs: Vec<Pair> = match pairs {
        Some(p) => fs::read_to_string(&p)
            .with_context(|| format!("reading {}", p.display()))?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", p.display(), i + 1)))
            .collect::<Result<_>>()?,
        None => vec![Pair { candidate: candidate.unwrap_or_default(), reference: reference.unwrap_or_default() }],
    };
    let texts: Vec<String> = pairs.iter().flat_map(|p| [p.candidate.clone(), p.reference.clone()]).collect();
    let embedded = embedder.embed(&texts)?;
    for (i, chunk) in embedded.chunks(2).enumerate() {
        let value = match (&chunk[0], &chunk[1]) {
            (Some(c), Some(r)) => serde_json::to_value(greedy_match_score(c, r)?)?,
            _ => serde_json::json!({"precision": 0.0, "recall": 0.0, "f1": 0.0, "empty": true}),
        };
        let mut line = serde_json::Map::new();
        line.insert("index".into(), i.into());
        line.insert("score".into(), value);
        println!("{}", serde_json::Value::Object(line));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Corpus(cmd) => corpus_cmd(&cfg, cmd),
        Command::Eval(cmd) => match cmd {
            EvalCmd::Nli { modes, corpora, out } => {
                let experiment = Experiment::Nli {
                    modes: modes.resolve(),
                    corpora: configured_corpora(&cfg, &corpora.corpora)?,
                    limit: corpora.limit,
                };
                run_experiment(&cfg, experiment, &out)
            }
            EvalCmd::Generation { modes, out } => {
                run_experiment(&cfg, Experiment::Generation { modes: modes.resolve() }, &out)
            }
            EvalCmd::Scenarios { modes, corpus, n, filter, out } => {
                let experiment = Experiment::Scenarios {
                    modes,
                    corpus,
                    n,
                    filter_three_of_five: filter == Some(FilterArg::ThreeOfFive),
                };
                run_experiment(&cfg, experiment, &out)
            }
            EvalCmd::Ablation { noise, corpora, out } => {
                let noise = if noise.is_empty() { NoiseKind::ALL.to_vec() } else { noise };
                let experiment = Experiment::Ablation {
                    noise,
                    corpora: configured_corpora(&cfg, &corpora.corpora)?,
                    limit: corpora.limit,
                };
                run_experiment(&cfg, experiment, &out)
            }
        },
        Command::Pseudogen { n, corpus, out } => run_experiment(&cfg, Experiment::Pseudogen { n, corpus }, &out),
        Command::Score { candidate, reference, pairs } => score_cmd(&cfg, candidate, reference, pairs),
        Command::Serve { bind, port, event_log } => {
            if let Some(b) = bind {
                cfg.service.bind = b;
            }
            if let Some(p) = port {
                cfg.service.port = p;
            }
            if let Some(l) = event_log {
                cfg.service.event_log = Some(l);
            }
            discuss_service::run_blocking(&cfg)?;
            Ok(())
        }
        Command::Replay { from, out, verify } => {
            let result = replay(&from, &out)?;
            print_outcome(&result.outcome, &out)?;
            if result.mismatches.is_empty() {
                println!("replay matches the recorded run ({} files)", result.outcome.files.len());
            } else {
                for m in &result.mismatches {
                    eprintln!("differs: {m}");
                }
                if verify {
                    bail!("{} report files differ from the recorded run", result.mismatches.len());
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let causes: Vec<String> = e.chain().skip(1).map(|c| c.to_string()).collect();
            let err = serde_json::json!({ "error": e.to_string(), "causes": causes });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}
