//! Exemplar noise for the prompt ablations. Only exemplars are touched; the
//! target problem never passes through here.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corpus::NLILabel;
use crate::prompting::Exemplar;
use crate::transcript::DiscussionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    RandomDiscussion,
    TruncateDiscussion,
    RandomLabel,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 3] =
        [NoiseKind::RandomDiscussion, NoiseKind::TruncateDiscussion, NoiseKind::RandomLabel];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseKind::RandomDiscussion => "random-discussion",
            NoiseKind::TruncateDiscussion => "truncate-discussion",
            NoiseKind::RandomLabel => "random-label",
        }
    }

    pub fn row_label(self) -> &'static str {
        match self {
            NoiseKind::RandomDiscussion => "Random dis.",
            NoiseKind::TruncateDiscussion => "Cutting dis.",
            NoiseKind::RandomLabel => "Random label",
        }
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown noise kind {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, seed: u64) -> Self {
        Self { kind, seed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyExemplars {
    pub exemplars: Vec<Exemplar>,
    /// One line per exemplar left as is, with the reason.
    pub skipped: Vec<String>,
}

pub fn apply_noise(
    exemplars: &[Exemplar],
    spec: NoiseSpec,
    pool: &[DiscussionRecord],
) -> Result<NoisyExemplars, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = exemplars.to_vec();
    let mut skipped = Vec::new();
    match spec.kind {
        NoiseKind::RandomDiscussion => {
            if pool.is_empty() {
                return Err(HarnessError::EmptyPool);
            }
            let own: BTreeSet<&str> = exemplars.iter().map(|e| e.problem.id.as_str()).collect();
            if let Some(r) = pool.iter().find(|r| own.contains(r.problem_id.as_str())) {
                return Err(HarnessError::PoolNotDisjoint(r.problem_id.clone()));
            }
            for ex in &mut out {
                ex.discussion = Some(pool[rng.random_range(0..pool.len())].clone());
            }
        }
        NoiseKind::TruncateDiscussion => {
            for ex in &mut out {
                let Some(d) = ex.discussion.as_mut() else {
                    skipped.push(format!("{}: no discussion to truncate", ex.problem.id));
                    continue;
                };
                let len = d.utterances.len();
                if len < 2 {
                    skipped.push(format!("{}: single-utterance discussion not truncated", ex.problem.id));
                    continue;
                }
                let k = rng.random_range(1..len);
                d.utterances.truncate(k);
            }
        }
        NoiseKind::RandomLabel => {
            for ex in &mut out {
                ex.problem.gold_label = NLILabel::ALL[rng.random_range(0..3)];
            }
        }
    }
    Ok(NoisyExemplars { exemplars: out, skipped })
}
