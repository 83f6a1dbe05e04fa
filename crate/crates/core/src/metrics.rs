//! Copying metrics over a [`Corpus`]: copying ratio, copying error rate
//! (CER), high-overlap sentence counts, POS buckets, metadata groups,
//! checkpoint learning curves and corpus BLEU.
//!
//! A hypothesis word is a *copy* when its surface also appears anywhere in
//! the source sentence. Punctuation never counts as a copy. A copy is an
//! *error* when its surface does not appear in the reference.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::ops::{Add, AddAssign};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{self, Corpus, CorpusError, CorpusPaths, ParallelExample, Sentence, Token};

pub const OTHERS_BUCKET: &str = "Others";
pub const DEFAULT_BUCKETS: [&str; 4] = ["PROPN", "ADP", "NUM", "NOUN"];

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("line {line}: example has no POS tags")]
    MissingPos { line: usize },
    #[error("line {line}: example has no metadata key {key:?}")]
    MissingMeta { key: String, line: usize },
    #[error("duplicate curve label {0:?}")]
    DuplicateLabel(String),
    #[error("{hypotheses} hypotheses but {references} references")]
    LineCountMismatch {
        hypotheses: usize,
        references: usize,
    },
    #[error("n-gram order must be at least 1")]
    BadOrder,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// How surfaces are compared and what the ratio denominator counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MetricConfig {
    pub lowercase: bool,
    /// Count punctuation in the ratio denominator (never in the numerator).
    pub keep_punct_denominator: bool,
}

impl MetricConfig {
    pub fn normalize<'a>(&self, surface: &'a str) -> Cow<'a, str> {
        if self.lowercase {
            Cow::Owned(surface.to_lowercase())
        } else {
            Cow::Borrowed(surface)
        }
    }

    /// Normalized surfaces of `sentence` as a lookup set.
    pub fn word_set(&self, sentence: &Sentence) -> HashSet<String> {
        sentence
            .surfaces()
            .map(|s| self.normalize(s).into_owned())
            .collect()
    }
}

/// Raw copy counts. `copy_errors` is `None` when references are missing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CopyStats {
    pub copy_tokens: u64,
    pub total_tokens: u64,
    pub copy_errors: Option<u64>,
}

impl Default for CopyStats {
    fn default() -> Self {
        CopyStats {
            copy_tokens: 0,
            total_tokens: 0,
            copy_errors: Some(0),
        }
    }
}

impl CopyStats {
    pub fn ratio(&self) -> f64 {
        if self.total_tokens == 0 {
            0.0
        } else {
            self.copy_tokens as f64 / self.total_tokens as f64
        }
    }

    /// Undefined (not zero) when nothing was copied or references are absent.
    pub fn cer(&self) -> Option<f64> {
        match self.copy_errors {
            Some(errors) if self.copy_tokens > 0 => Some(errors as f64 / self.copy_tokens as f64),
            _ => None,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.copy_errors.unwrap_or(0) <= self.copy_tokens && self.copy_tokens <= self.total_tokens
    }
}

impl Add for CopyStats {
    type Output = CopyStats;

    fn add(self, rhs: CopyStats) -> CopyStats {
        CopyStats {
            copy_tokens: self.copy_tokens + rhs.copy_tokens,
            total_tokens: self.total_tokens + rhs.total_tokens,
            copy_errors: self.copy_errors.zip(rhs.copy_errors).map(|(a, b)| a + b),
        }
    }
}

impl AddAssign for CopyStats {
    fn add_assign(&mut self, rhs: CopyStats) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for CopyStats {
    fn sum<I: Iterator<Item = CopyStats>>(iter: I) -> CopyStats {
        iter.fold(CopyStats::default(), Add::add)
    }
}

/// Is `token` a copy of some word in `source_words`? Callers filter
/// punctuation first; `source_words` must already be normalized.
pub fn is_copy_token(token: &Token, source_words: &HashSet<String>, config: &MetricConfig) -> bool {
    source_words.contains(config.normalize(token.surface()).as_ref())
}

/// Per-token copy classification of one hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokenClass {
    Punct,
    Novel,
    Copy { error: Option<bool> },
}

fn classify(example: &ParallelExample, config: &MetricConfig) -> Vec<TokenClass> {
    let source = config.word_set(&example.source);
    let reference = example.reference.as_ref().map(|r| config.word_set(r));
    example
        .hypothesis
        .tokens
        .iter()
        .map(|tok| {
            if tok.is_punct() {
                TokenClass::Punct
            } else if is_copy_token(tok, &source, config) {
                let error = reference
                    .as_ref()
                    .map(|r| !r.contains(config.normalize(tok.surface()).as_ref()));
                TokenClass::Copy { error }
            } else {
                TokenClass::Novel
            }
        })
        .collect()
}

fn stats_of(classes: &[TokenClass], has_reference: bool, config: &MetricConfig) -> CopyStats {
    let mut stats = CopyStats {
        copy_errors: has_reference.then_some(0),
        ..CopyStats::default()
    };
    for class in classes {
        match class {
            TokenClass::Punct => {
                if config.keep_punct_denominator {
                    stats.total_tokens += 1;
                }
            }
            TokenClass::Novel => stats.total_tokens += 1,
            TokenClass::Copy { error } => {
                stats.total_tokens += 1;
                stats.copy_tokens += 1;
                if let (Some(count), Some(true)) = (stats.copy_errors.as_mut(), error) {
                    *count += 1;
                }
            }
        }
    }
    stats
}

/// Copy counts of a single example.
pub fn sentence_stats(example: &ParallelExample, config: &MetricConfig) -> CopyStats {
    stats_of(
        &classify(example, config),
        example.reference.is_some(),
        config,
    )
}

/// Corpus-level copying ratio and CER. Per-sentence counts are summed, so
/// long sentences weigh more than short ones.
pub fn copy_stats(corpus: &Corpus, config: &MetricConfig) -> Result<CopyStats, MetricsError> {
    if corpus.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(corpus
        .examples
        .par_iter()
        .map(|ex| sentence_stats(ex, config))
        .reduce(CopyStats::default, Add::add))
}

/// Fraction of non-punctuation hypothesis words that are copies. Zero for a
/// hypothesis with no words.
pub fn sentence_overlap(example: &ParallelExample, config: &MetricConfig) -> f64 {
    let classes = classify(example, config);
    let words = classes.iter().filter(|c| **c != TokenClass::Punct).count();
    if words == 0 {
        return 0.0;
    }
    let copies = classes
        .iter()
        .filter(|c| matches!(c, TokenClass::Copy { .. }))
        .count();
    copies as f64 / words as f64
}

/// Number of examples whose overlap strictly exceeds `threshold`.
pub fn count_high_overlap(corpus: &Corpus, config: &MetricConfig, threshold: f64) -> usize {
    corpus
        .examples
        .par_iter()
        .filter(|ex| sentence_overlap(ex, config) > threshold)
        .count()
}

/// Maps fine POS tags onto report buckets. Tags without an entry land in
/// [`OTHERS_BUCKET`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagMap {
    map: HashMap<String, String>,
    order: Vec<String>,
}

impl Default for TagMap {
    /// PROPN, ADP, NUM and NOUN map to themselves.
    fn default() -> Self {
        TagMap::from_pairs(
            DEFAULT_BUCKETS
                .iter()
                .map(|t| (t.to_string(), t.to_string())),
        )
    }
}

impl TagMap {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Self {
        let mut map = HashMap::new();
        let mut order: Vec<String> = Vec::new();
        for (tag, bucket) in pairs {
            if !order.contains(&bucket) {
                order.push(bucket.clone());
            }
            map.insert(tag, bucket);
        }
        if !order.iter().any(|b| b == OTHERS_BUCKET) {
            order.push(OTHERS_BUCKET.to_string());
        }
        TagMap { map, order }
    }

    /// One `tag bucket` pair per line (tab or space separated); `#` starts a
    /// comment line. Returns the offending line number on a malformed line.
    pub fn parse(text: &str) -> Result<Self, usize> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split_whitespace();
            match (fields.next(), fields.next(), fields.next()) {
                (Some(tag), Some(bucket), None) => {
                    pairs.push((tag.to_string(), bucket.to_string()))
                }
                _ => return Err(i + 1),
            }
        }
        Ok(TagMap::from_pairs(pairs))
    }

    pub fn bucket_of<'a>(&'a self, tag: &str) -> &'a str {
        self.map
            .get(tag)
            .map(String::as_str)
            .unwrap_or(OTHERS_BUCKET)
    }

    /// Bucket names in report order, `Others` last unless placed explicitly.
    pub fn buckets(&self) -> &[String] {
        &self.order
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketedStats {
    /// In [`TagMap::buckets`] order. Each bucket's `total_tokens` is the
    /// corpus-wide total, so bucket ratios add up to the overall ratio.
    pub buckets: Vec<(String, CopyStats)>,
    pub total: CopyStats,
}

impl BucketedStats {
    pub fn get(&self, bucket: &str) -> Option<&CopyStats> {
        self.buckets
            .iter()
            .find(|(b, _)| b == bucket)
            .map(|(_, s)| s)
    }
}

pub fn bucket_by_pos(
    corpus: &Corpus,
    config: &MetricConfig,
    tag_map: &TagMap,
) -> Result<BucketedStats, MetricsError> {
    if corpus.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if let Some(line) = corpus.examples.iter().position(|ex| ex.pos_tags.is_none()) {
        return Err(MetricsError::MissingPos { line: line + 1 });
    }
    let has_reference = corpus.has_references();

    let mut total = CopyStats::default();
    let mut per_bucket: HashMap<&str, (u64, u64)> = HashMap::new();
    for ex in &corpus.examples {
        let classes = classify(ex, config);
        total += stats_of(&classes, has_reference, config);
        let tags = ex.pos_tags.as_deref().unwrap_or_default();
        for (class, tag) in classes.iter().zip(tags) {
            if let TokenClass::Copy { error } = class {
                let entry = per_bucket.entry(tag_map.bucket_of(tag)).or_default();
                entry.0 += 1;
                if *error == Some(true) {
                    entry.1 += 1;
                }
            }
        }
    }
    if !has_reference {
        total.copy_errors = None;
    }

    let buckets = tag_map
        .buckets()
        .iter()
        .map(|name| {
            let (copies, errors) = per_bucket.get(name.as_str()).copied().unwrap_or_default();
            let stats = CopyStats {
                copy_tokens: copies,
                total_tokens: total.total_tokens,
                copy_errors: has_reference.then_some(errors),
            };
            (name.clone(), stats)
        })
        .collect();
    Ok(BucketedStats { buckets, total })
}

/// Partitions the corpus by the value of `key` in each example's metadata
/// and computes copy stats per partition.
pub fn group_by_key(
    corpus: &Corpus,
    config: &MetricConfig,
    key: &str,
) -> Result<BTreeMap<String, CopyStats>, MetricsError> {
    if corpus.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut groups: BTreeMap<String, CopyStats> = BTreeMap::new();
    for (i, ex) in corpus.examples.iter().enumerate() {
        let value = ex.meta.get(key).ok_or_else(|| MetricsError::MissingMeta {
            key: key.to_string(),
            line: i + 1,
        })?;
        let stats = sentence_stats(ex, config);
        *groups.entry(value.clone()).or_default() += stats;
    }
    if !corpus.has_references() {
        for stats in groups.values_mut() {
            stats.copy_errors = None;
        }
    }
    Ok(groups)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CurvePoint {
    pub label: String,
    pub stats: CopyStats,
}

/// One point per hypothesis file (e.g. one per training checkpoint),
/// labelled by file stem, in the order given.
pub fn learning_curve(
    source: &Path,
    reference: &Path,
    hypotheses: &[PathBuf],
    merge_subwords: bool,
    config: &MetricConfig,
) -> Result<Vec<CurvePoint>, MetricsError> {
    let mut seen = HashSet::new();
    let mut points = Vec::with_capacity(hypotheses.len());
    for hyp in hypotheses {
        let label = hyp
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| hyp.display().to_string());
        if !seen.insert(label.clone()) {
            return Err(MetricsError::DuplicateLabel(label));
        }
        let paths = CorpusPaths::new(source, hyp).with_reference(reference);
        let corpus = corpus::load_parallel(&paths, merge_subwords)?;
        points.push(CurvePoint {
            label,
            stats: copy_stats(&corpus, config)?,
        });
    }
    Ok(points)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
struct NgramCounts {
    matches: Vec<u64>,
    totals: Vec<u64>,
    hyp_len: u64,
    ref_len: u64,
}

impl NgramCounts {
    fn zero(max_n: usize) -> Self {
        NgramCounts {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    fn merge(mut self, other: NgramCounts) -> Self {
        for (a, b) in self.matches.iter_mut().zip(other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(other.totals) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
        self
    }
}

fn ngram_counts<T: AsRef<str>>(hyp: &[T], reference: &[T], max_n: usize) -> NgramCounts {
    let hyp: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let reference: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let mut counts = NgramCounts::zero(max_n);
    counts.hyp_len = hyp.len() as u64;
    counts.ref_len = reference.len() as u64;
    for n in 1..=max_n {
        if hyp.len() < n {
            break;
        }
        let mut ref_grams: HashMap<&[&str], u64> = HashMap::new();
        for gram in reference.windows(n) {
            *ref_grams.entry(gram).or_default() += 1;
        }
        let mut hyp_grams: HashMap<&[&str], u64> = HashMap::new();
        for gram in hyp.windows(n) {
            *hyp_grams.entry(gram).or_default() += 1;
        }
        counts.totals[n - 1] = (hyp.len() + 1 - n) as u64;
        counts.matches[n - 1] = hyp_grams
            .iter()
            .map(|(gram, &c)| c.min(ref_grams.get(gram).copied().unwrap_or(0)))
            .sum();
    }
    counts
}

/// Unsmoothed corpus BLEU on a 0-100 scale with a single reference per
/// hypothesis. Zero whenever some n-gram order has no match.
pub fn corpus_bleu<T>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
    max_n: usize,
) -> Result<f64, MetricsError>
where
    T: AsRef<str> + Sync,
{
    if max_n == 0 {
        return Err(MetricsError::BadOrder);
    }
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LineCountMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    let counts = hypotheses
        .par_iter()
        .zip(references.par_iter())
        .map(|(h, r)| ngram_counts(h, r, max_n))
        .reduce(|| NgramCounts::zero(max_n), NgramCounts::merge);

    if counts.hyp_len == 0 || counts.matches.contains(&0) {
        return Ok(0.0);
    }
    let log_precision: f64 = counts
        .matches
        .iter()
        .zip(&counts.totals)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / max_n as f64;
    let brevity = (1.0 - counts.ref_len as f64 / counts.hyp_len as f64)
        .min(0.0)
        .exp();
    Ok(100.0 * brevity * log_precision.exp())
}

/// Corpus BLEU of the hypotheses against the references, after the
/// config's normalization. `None` when any reference is missing.
pub fn corpus_bleu_of(
    corpus: &Corpus,
    config: &MetricConfig,
    max_n: usize,
) -> Result<Option<f64>, MetricsError> {
    if !corpus.has_references() || corpus.is_empty() {
        return Ok(None);
    }
    let words = |s: &Sentence| -> Vec<String> {
        s.surfaces()
            .map(|w| config.normalize(w).into_owned())
            .collect()
    };
    let hyps: Vec<Vec<String>> = corpus
        .examples
        .iter()
        .map(|ex| words(&ex.hypothesis))
        .collect();
    let refs: Vec<Vec<String>> = corpus
        .examples
        .iter()
        .filter_map(|ex| ex.reference.as_ref().map(words))
        .collect();
    corpus_bleu(&hyps, &refs, max_n).map(Some)
}
