//! Greedy cosine token matching, the significance tests, and embedding
//! providers.
//!
//! Scores are stored in [0, 1]; reports multiply by 100 for display. No IDF
//! weighting and no baseline rescaling are applied.

mod embed;
mod score;
mod stats;

use thiserror::Error;

pub use embed::{
    decode_embed_response, tokenize, EmbedItem, EmbedResponse, EmbeddingProvider, HashEmbedder,
    HttpEmbeddingConfig, HttpEmbeddingProvider,
};
pub use score::{
    aggregate_scores, greedy_match_score, greedy_match_score_with, ScoreOptions, ScoreTriple,
    TagAggregate, TokenEmbeddings,
};
pub use stats::{
    discordant_pairs, mcnemar_test, student_t_two_sided, welch_t_test, StatTest, StatTestResult,
    ALPHA, MCNEMAR_EXACT_LIMIT,
};

use crate::transcript::ContributionTag;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("token sequence is empty")]
    EmptySequence,
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("{tokens} tokens but {vectors} vectors")]
    LengthMismatch { tokens: usize, vectors: usize },
    #[error("embedding vector has zero norm")]
    ZeroVector,
    #[error("need at least two samples per group, got {left} and {right}")]
    InsufficientSamples { left: usize, right: usize },
    #[error("both samples have zero variance and different means")]
    DegenerateVariance,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("no scores for tag {0:?}")]
    EmptyGroup(ContributionTag),
    #[error("tag {0:?} is not scored")]
    InvalidTag(ContributionTag),
    #[error("embedding provider: {0}")]
    Provider(String),
}
