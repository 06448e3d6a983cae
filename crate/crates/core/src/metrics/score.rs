use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::transcript::ContributionTag;

/// Tokens of one text with their unit-normalized embedding vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    tokens: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

impl TokenEmbeddings {
    /// Validates shape and L2-normalizes every vector.
    pub fn new(tokens: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self, MetricsError> {
        if tokens.is_empty() || vectors.is_empty() {
            return Err(MetricsError::EmptySequence);
        }
        if tokens.len() != vectors.len() {
            return Err(MetricsError::LengthMismatch { tokens: tokens.len(), vectors: vectors.len() });
        }
        let dim = vectors[0].len();
        if dim == 0 {
            return Err(MetricsError::DimensionMismatch { left: 0, right: 0 });
        }
        let mut normalized = Vec::with_capacity(vectors.len());
        for v in vectors {
            if v.len() != dim {
                return Err(MetricsError::DimensionMismatch { left: dim, right: v.len() });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(MetricsError::ZeroVector);
            }
            normalized.push(v.into_iter().map(|x| x / norm).collect());
        }
        Ok(Self { tokens, vectors: normalized })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreTriple {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self { precision, recall, f1 }
    }

    pub const ZERO: ScoreTriple = ScoreTriple { precision: 0.0, recall: 0.0, f1: 0.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreOptions {
    /// Clamp cosines into [0, 1] before matching.
    pub clamp: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self { clamp: true }
    }
}

pub fn greedy_match_score(
    candidate: &TokenEmbeddings,
    reference: &TokenEmbeddings,
) -> Result<ScoreTriple, MetricsError> {
    greedy_match_score_with(candidate, reference, ScoreOptions::default())
}

/// Precision averages, over candidate tokens, the best cosine against any
/// reference token; recall does the same from the reference side.
pub fn greedy_match_score_with(
    candidate: &TokenEmbeddings,
    reference: &TokenEmbeddings,
    options: ScoreOptions,
) -> Result<ScoreTriple, MetricsError> {
    if candidate.dim() != reference.dim() {
        return Err(MetricsError::DimensionMismatch { left: candidate.dim(), right: reference.dim() });
    }
    let (nc, nr) = (candidate.len(), reference.len());
    let mut row_best = vec![f64::NEG_INFINITY; nc];
    let mut col_best = vec![f64::NEG_INFINITY; nr];
    for (i, cv) in candidate.vectors.iter().enumerate() {
        for (j, rv) in reference.vectors.iter().enumerate() {
            let mut sim: f64 = cv.iter().zip(rv).map(|(a, b)| a * b).sum();
            if options.clamp {
                sim = sim.clamp(0.0, 1.0);
            }
            if sim > row_best[i] {
                row_best[i] = sim;
            }
            if sim > col_best[j] {
                col_best[j] = sim;
            }
        }
    }
    let precision = row_best.iter().sum::<f64>() / nc as f64;
    let recall = col_best.iter().sum::<f64>() / nr as f64;
    Ok(ScoreTriple::from_pr(precision, recall))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagAggregate {
    pub supportive: f64,
    pub unsupportive: f64,
    /// supportive − unsupportive
    pub diff: f64,
    pub n_supportive: usize,
    pub n_unsupportive: usize,
}

/// Mean F1 per tag and the supportive-minus-unsupportive gap.
pub fn aggregate_scores(per_item: &[(ContributionTag, ScoreTriple)]) -> Result<TagAggregate, MetricsError> {
    let (mut s_sum, mut s_n, mut u_sum, mut u_n) = (0.0, 0usize, 0.0, 0usize);
    for (tag, score) in per_item {
        match tag {
            ContributionTag::Supportive => {
                s_sum += score.f1;
                s_n += 1;
            }
            ContributionTag::Unsupportive => {
                u_sum += score.f1;
                u_n += 1;
            }
            ContributionTag::Irrelevant => return Err(MetricsError::InvalidTag(*tag)),
        }
    }
    if s_n == 0 {
        return Err(MetricsError::EmptyGroup(ContributionTag::Supportive));
    }
    if u_n == 0 {
        return Err(MetricsError::EmptyGroup(ContributionTag::Unsupportive));
    }
    let supportive = s_sum / s_n as f64;
    let unsupportive = u_sum / u_n as f64;
    Ok(TagAggregate {
        supportive,
        unsupportive,
        diff: supportive - unsupportive,
        n_supportive: s_n,
        n_unsupportive: u_n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(vs: &[&[f64]]) -> TokenEmbeddings {
        TokenEmbeddings::new(
            (0..vs.len()).map(|i| format!("t{i}")).collect(),
            vs.iter().map(|v| v.to_vec()).collect(),
        )
        .unwrap()
    }

    // Exhaustive all-pairs evaluation straight from the definition.
    fn oracle(c: &TokenEmbeddings, r: &TokenEmbeddings) -> (f64, f64) {
        let cos = |a: &[f64], b: &[f64]| -> f64 {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            (dot / (na * nb)).clamp(0.0, 1.0)
        };
        let p = c.vectors().iter()
            .map(|a| r.vectors().iter().map(|b| cos(a, b)).fold(f64::MIN, f64::max))
            .sum::<f64>() / c.len() as f64;
        let rc = r.vectors().iter()
            .map(|b| c.vectors().iter().map(|a| cos(a, b)).fold(f64::MIN, f64::max))
            .sum::<f64>() / r.len() as f64;
        (p, rc)
    }

    #[test]
    fn hand_worked_example() {
        let c = emb(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let r = emb(&[&[1.0, 0.0]]);
        let s = greedy_match_score(&c, &r).unwrap();
        assert_eq!((s.precision, s.recall), (0.5, 1.0));
        assert!((s.f1 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identity_and_orthogonal() {
        let a = emb(&[&[0.3, 0.4, 0.5], &[-1.0, 2.0, 0.1]]);
        let s = greedy_match_score(&a, &a).unwrap();
        for v in [s.precision, s.recall, s.f1] {
            assert!((v - 1.0).abs() < 1e-12);
        }

        let c = emb(&[&[1.0, 0.0, 0.0]]);
        let r = emb(&[&[0.0, 1.0, 0.0], &[0.0, 0.0, -1.0]]);
        assert_eq!(greedy_match_score(&c, &r).unwrap(), ScoreTriple::ZERO);
    }

    #[test]
    fn shape_errors() {
        assert_eq!(TokenEmbeddings::new(vec![], vec![]), Err(MetricsError::EmptySequence));
        let c = emb(&[&[1.0, 0.0]]);
        let r = emb(&[&[1.0, 0.0, 0.0]]);
        assert!(matches!(greedy_match_score(&c, &r), Err(MetricsError::DimensionMismatch { .. })));
        assert_eq!(
            TokenEmbeddings::new(vec!["a".into()], vec![vec![0.0, 0.0]]),
            Err(MetricsError::ZeroVector)
        );
    }

    #[test]
    fn aggregate_examples() {
        let t = |f1| ScoreTriple { precision: f1, recall: f1, f1 };
        let agg = aggregate_scores(&[
            (ContributionTag::Supportive, t(0.848)),
            (ContributionTag::Unsupportive, t(0.791)),
        ])
        .unwrap();
        assert_eq!(agg.supportive, 0.848);
        assert_eq!(agg.unsupportive, 0.791);
        assert!((agg.diff - 0.057).abs() < 1e-12);

        let same = aggregate_scores(&[
            (ContributionTag::Supportive, t(0.5)),
            (ContributionTag::Unsupportive, t(0.5)),
            (ContributionTag::Supportive, t(0.5)),
        ])
        .unwrap();
        assert_eq!(same.diff, 0.0);

        assert_eq!(
            aggregate_scores(&[(ContributionTag::Supportive, t(0.5))]),
            Err(MetricsError::EmptyGroup(ContributionTag::Unsupportive))
        );
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        (1usize..=6).prop_flat_map(|dim| {
            let v = prop::collection::vec(-1.0f64..1.0, dim)
                .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3));
            (prop::collection::vec(v.clone(), 1..=6), prop::collection::vec(v, 1..=6))
        })
    }

    fn to_emb(vs: Vec<Vec<f64>>) -> TokenEmbeddings {
        TokenEmbeddings::new((0..vs.len()).map(|i| i.to_string()).collect(), vs).unwrap()
    }

    proptest! {
        #[test]
        fn swap_exchanges_precision_and_recall((c, r) in instance()) {
            let (c, r) = (to_emb(c), to_emb(r));
            let a = greedy_match_score(&c, &r).unwrap();
            let b = greedy_match_score(&r, &c).unwrap();
            prop_assert_eq!(a.precision, b.recall);
            prop_assert_eq!(a.recall, b.precision);
            prop_assert!((a.f1 - b.f1).abs() < 1e-15);
        }

        #[test]
        fn duplicate_reference_token_changes_nothing((c, r) in instance(), pick in 0usize..6) {
            let (ce, re) = (to_emb(c), to_emb(r.clone()));
            let mut r2 = r.clone();
            r2.push(r[pick % r.len()].clone());
            let re2 = to_emb(r2);
            let a = greedy_match_score(&ce, &re).unwrap();
            let b = greedy_match_score(&ce, &re2).unwrap();
            prop_assert_eq!(a.precision, b.precision);
            // The duplicate's best match equals the original token's, so the
            // new recall is the old sum plus that same best, over n + 1.
            let n = re.len() as f64;
            let dup = &re2.vectors()[re.len()];
            let best = ce.vectors().iter()
                .map(|v| v.iter().zip(dup).map(|(x, y)| x * y).sum::<f64>().clamp(0.0, 1.0))
                .fold(f64::MIN, f64::max);
            prop_assert!((b.recall - (a.recall * n + best) / (n + 1.0)).abs() < 1e-12);
            let (_, oracle_r) = oracle(&ce, &re2);
            prop_assert!((b.recall - oracle_r).abs() < 1e-9);
        }

        #[test]
        fn matches_oracle((c, r) in instance()) {
            let (c, r) = (to_emb(c), to_emb(r));
            let s = greedy_match_score(&c, &r).unwrap();
            let (p, rc) = oracle(&c, &r);
            prop_assert!((s.precision - p).abs() <= 1e-9);
            prop_assert!((s.recall - rc).abs() <= 1e-9);
        }
    }
}
