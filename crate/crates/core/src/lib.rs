//! Copying-behavior analysis for translation outputs and beam search with a
//! copying penalty.
//!
//! - [`corpus`]: line-aligned file loading, tokenization, subword merging.
//! - [`metrics`]: copying ratio, copying error rate, overlap counts, POS
//!   buckets, metadata groups, learning curves, corpus BLEU.
//! - [`decoder`]: copy-penalized beam search and its exhaustive oracle.
//! - [`toymodel`]: an exactly enumerable lexicon scorer.

pub mod corpus;
pub mod decoder;
pub mod metrics;
pub mod toymodel;

pub use corpus::{tokenize, Corpus, CorpusError, CorpusPaths, ParallelExample, Sentence, Token};
pub use decoder::{
    apply_copy_penalty, beam_search, copy_mask, exhaustive_decode, length_norm, penalty_sweep,
    DecodeError, Hypothesis, PenaltyConfig, ScoringModel, SearchMode, SweepRow, TokenId,
    Vocabulary,
};
pub use metrics::{
    bucket_by_pos, copy_stats, corpus_bleu, count_high_overlap, group_by_key, learning_curve,
    sentence_overlap, BucketedStats, CopyStats, CurvePoint, MetricConfig, MetricsError, TagMap,
};
pub use toymodel::{build_lexicon, LexiconError, LexiconModel};
