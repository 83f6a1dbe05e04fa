//! Beam search over an abstract next-token scorer, with a copying penalty
//! on every vocabulary entry that also occurs in the source sentence.
//!
//! The penalty multiplies the probability of a masked token by `alpha`,
//! i.e. adds `ln(alpha)` to its log-probability. Nothing is renormalized
//! afterwards, so unmasked tokens keep their scores. Punctuation and the
//! reserved control tokens are never masked.
//!
//! [`exhaustive_decode`] enumerates every bounded-length output with the
//! same scoring and tie-break as [`beam_search`]; it exists to check the
//! search on small instances.

use std::cmp::Ordering;
use std::collections::HashMap;

use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{is_punct_str, Sentence, Token};
use crate::metrics::{self, CopyStats, MetricConfig, MetricsError};

pub type TokenId = u32;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const UNK: &str = "<unk>";

/// Upper bound on `V^max_len` accepted by [`exhaustive_decode`].
pub const MAX_SEARCH_SPACE: u64 = 10_000_000;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("model returned {found} log-probabilities for a vocabulary of {expected}")]
    ModelVocabMismatch { expected: usize, found: usize },
    #[error("search space {vocab}^{max_len} exceeds {MAX_SEARCH_SPACE}")]
    SearchSpaceTooLarge { vocab: usize, max_len: usize },
    #[error("invalid decoder config: {0}")]
    InvalidConfig(String),
    #[error("scoring model failed: {0}")]
    Model(#[source] Box<dyn std::error::Error + Send + Sync>),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Dense id <-> surface mapping. Ids 0, 1 and 2 are `<s>`, `</s>` and
/// `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    ids: HashMap<String, TokenId>,
    punct: Vec<bool>,
}

impl Vocabulary {
    /// Builds a vocabulary from `words` in first-seen order after the
    /// reserved ids. Duplicates and reserved surfaces are skipped.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            surfaces: Vec::new(),
            ids: HashMap::new(),
            punct: Vec::new(),
        };
        for w in [BOS, EOS, UNK] {
            vocab.insert(w.to_string());
        }
        for w in words {
            vocab.insert(w.into());
        }
        vocab
    }

    fn insert(&mut self, surface: String) -> TokenId {
        if let Some(&id) = self.ids.get(&surface) {
            return id;
        }
        let id = self.surfaces.len() as TokenId;
        self.punct.push(is_punct_str(&surface));
        self.ids.insert(surface.clone(), id);
        self.surfaces.push(surface);
        id
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn bos(&self) -> TokenId {
        0
    }

    pub fn eos(&self) -> TokenId {
        1
    }

    pub fn unk(&self) -> TokenId {
        2
    }

    pub fn is_reserved(&self, id: TokenId) -> bool {
        id <= 2
    }

    pub fn id(&self, surface: &str) -> Option<TokenId> {
        self.ids.get(surface).copied()
    }

    pub fn surface(&self, id: TokenId) -> &str {
        &self.surfaces[id as usize]
    }

    pub fn is_punct(&self, id: TokenId) -> bool {
        self.punct[id as usize]
    }

    /// Output words of a token sequence, with `</s>` dropped.
    pub fn to_sentence(&self, tokens: &[TokenId]) -> Sentence {
        let tokens: Vec<Token> = tokens
            .iter()
            .filter(|&&id| id != self.eos())
            .filter_map(|&id| Token::new(self.surface(id)))
            .collect();
        let raw = tokens
            .iter()
            .map(Token::surface)
            .collect::<Vec<_>>()
            .join(" ");
        Sentence { tokens, raw }
    }
}

/// Next-token log-probabilities given a source sentence and an output
/// prefix. Implementations must be deterministic and safe to query from
/// several threads.
pub trait ScoringModel: Sync {
    type Error: std::error::Error + Send + Sync + 'static;

    /// One log-probability per vocabulary id.
    fn next_logprobs(&self, source: &Sentence, prefix: &[TokenId])
        -> Result<Vec<f64>, Self::Error>;

    /// Longest output (including `</s>`) the model can produce for
    /// `source`, if it has such a bound.
    fn max_output_len(&self, _source: &Sentence) -> Option<usize> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    /// Copying penalty. 1 disables it; below 1 discourages copying.
    pub alpha: f64,
    /// Length-normalization exponent.
    pub length_exp: f64,
    pub beam: usize,
    /// Maximum output length, `</s>` included.
    pub max_len: usize,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        PenaltyConfig {
            alpha: 1.0,
            length_exp: 0.0,
            beam: 5,
            max_len: 100,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(DecodeError::InvalidConfig(format!(
                "alpha must be positive and finite, got {}",
                self.alpha
            )));
        }
        if !(self.length_exp >= 0.0 && self.length_exp.is_finite()) {
            return Err(DecodeError::InvalidConfig(format!(
                "length exponent must be >= 0, got {}",
                self.length_exp
            )));
        }
        if self.beam == 0 {
            return Err(DecodeError::InvalidConfig("beam must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(DecodeError::InvalidConfig(
                "max_len must be positive".into(),
            ));
        }
        Ok(())
    }

    fn horizon<M: ScoringModel + ?Sized>(&self, model: &M, source: &Sentence) -> usize {
        match model.max_output_len(source) {
            Some(limit) => self.max_len.min(limit.max(1)),
            None => self.max_len,
        }
    }
}

/// A complete decode. `tokens` ends with `</s>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<TokenId>,
    pub raw_logprob: f64,
    /// Always `raw_logprob + copy_count * ln(alpha)`.
    pub penalized_logprob: f64,
    pub copy_count: usize,
    pub score: f64,
}

impl Hypothesis {
    fn complete(
        tokens: Vec<TokenId>,
        raw: f64,
        copies: usize,
        ln_alpha: f64,
        length_exp: f64,
    ) -> Self {
        let penalized = penalize(raw, copies, ln_alpha);
        let score = penalized / length_norm(tokens.len(), length_exp);
        Hypothesis {
            tokens,
            raw_logprob: raw,
            penalized_logprob: penalized,
            copy_count: copies,
            score,
        }
    }
}

fn penalize(raw: f64, copies: usize, ln_alpha: f64) -> f64 {
    raw + copies as f64 * ln_alpha
}

/// Best first: higher score, then shorter (earlier completion), then the
/// lexicographically smaller id sequence.
pub fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.tokens.len().cmp(&b.tokens.len()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// `true` at every id whose surface is a non-punctuation source word,
/// except the reserved ids.
pub fn copy_mask(source: &Sentence, vocab: &Vocabulary) -> Vec<bool> {
    let mut mask = vec![false; vocab.len()];
    for tok in source.tokens.iter().filter(|t| !t.is_punct()) {
        if let Some(id) = vocab.id(tok.surface()) {
            if !vocab.is_reserved(id) && !vocab.is_punct(id) {
                mask[id as usize] = true;
            }
        }
    }
    mask
}

/// Adds `ln(alpha)` to every masked log-probability. Not renormalized.
pub fn apply_copy_penalty(logprobs: &[f64], mask: &[bool], alpha: f64) -> Vec<f64> {
    let ln_alpha = alpha.ln();
    logprobs
        .iter()
        .zip(mask)
        .map(|(&lp, &masked)| if masked { lp + ln_alpha } else { lp })
        .collect()
}

/// GNMT length normalizer `((5 + len) / 6)^length_exp`.
pub fn length_norm(len: usize, length_exp: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(length_exp)
}

fn query<M: ScoringModel + ?Sized>(
    model: &M,
    source: &Sentence,
    prefix: &[TokenId],
    vocab_size: usize,
) -> Result<Vec<f64>, DecodeError> {
    let logprobs = model
        .next_logprobs(source, prefix)
        .map_err(|e| DecodeError::Model(Box::new(e)))?;
    if logprobs.len() != vocab_size {
        return Err(DecodeError::ModelVocabMismatch {
            expected: vocab_size,
            found: logprobs.len(),
        });
    }
    Ok(logprobs)
}

struct Partial {
    tokens: Vec<TokenId>,
    raw: f64,
    copies: usize,
}

struct Candidate {
    parent: usize,
    token: TokenId,
    raw: f64,
    copies: usize,
    penalized: f64,
}

/// Beam search with the copying penalty. Returns every hypothesis that
/// reached `</s>`, best first (see [`rank`]). `</s>` is forced at the last
/// step.
pub fn beam_search<M: ScoringModel + ?Sized>(
    model: &M,
    source: &Sentence,
    vocab: &Vocabulary,
    config: &PenaltyConfig,
) -> Result<Vec<Hypothesis>, DecodeError> {
    config.validate()?;
    let mask = copy_mask(source, vocab);
    let ln_alpha = config.alpha.ln();
    let eos = vocab.eos();
    let horizon = config.horizon(model, source);

    let mut live = vec![Partial {
        tokens: Vec::new(),
        raw: 0.0,
        copies: 0,
    }];
    let mut finished = Vec::new();

    for step in 1..=horizon {
        let forced = step == horizon;
        let mut candidates = Vec::new();
        for (parent, hyp) in live.iter().enumerate() {
            let logprobs = query(model, source, &hyp.tokens, vocab.len())?;
            let extend = |token: TokenId| {
                let raw = hyp.raw + logprobs[token as usize];
                let copies = hyp.copies + usize::from(mask[token as usize]);
                Candidate {
                    parent,
                    token,
                    raw,
                    copies,
                    penalized: penalize(raw, copies, ln_alpha),
                }
            };
            if forced {
                candidates.push(extend(eos));
            } else {
                candidates.extend((0..vocab.len() as TokenId).map(extend));
            }
        }

        // All candidates share a length, so the normalizer cannot reorder them.
        candidates.sort_by(|a, b| {
            b.penalized
                .total_cmp(&a.penalized)
                .then_with(|| live[a.parent].tokens.cmp(&live[b.parent].tokens))
                .then(a.token.cmp(&b.token))
        });
        candidates.truncate(config.beam);

        let mut next = Vec::with_capacity(candidates.len());
        for c in candidates {
            let mut tokens = Vec::with_capacity(step);
            tokens.extend_from_slice(&live[c.parent].tokens);
            tokens.push(c.token);
            if c.token == eos {
                finished.push(Hypothesis::complete(
                    tokens,
                    c.raw,
                    c.copies,
                    ln_alpha,
                    config.length_exp,
                ));
            } else {
                next.push(Partial {
                    tokens,
                    raw: c.raw,
                    copies: c.copies,
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }

    finished.sort_by(rank);
    Ok(finished)
}

/// Scores every `</s>`-terminated output up to the horizon and returns
/// the best one under [`rank`].
pub fn exhaustive_decode<M: ScoringModel + ?Sized>(
    model: &M,
    source: &Sentence,
    vocab: &Vocabulary,
    config: &PenaltyConfig,
) -> Result<Hypothesis, DecodeError> {
    config.validate()?;
    let horizon = config.horizon(model, source);
    let space = (vocab.len() as u64).checked_pow(horizon as u32);
    if space.is_none_or(|s| s > MAX_SEARCH_SPACE) {
        return Err(DecodeError::SearchSpaceTooLarge {
            vocab: vocab.len(),
            max_len: horizon,
        });
    }

    let mut search = Exhaustive {
        model,
        source,
        vocab,
        mask: copy_mask(source, vocab),
        ln_alpha: config.alpha.ln(),
        length_exp: config.length_exp,
        horizon,
        best: None,
    };
    let mut prefix = Vec::with_capacity(horizon);
    search.visit(&mut prefix, 0.0, 0)?;
    Ok(search.best.expect("at least the forced-eos output exists"))
}

struct Exhaustive<'a, M: ?Sized> {
    model: &'a M,
    source: &'a Sentence,
    vocab: &'a Vocabulary,
    mask: Vec<bool>,
    ln_alpha: f64,
    length_exp: f64,
    horizon: usize,
    best: Option<Hypothesis>,
}

impl<M: ScoringModel + ?Sized> Exhaustive<'_, M> {
    fn visit(
        &mut self,
        prefix: &mut Vec<TokenId>,
        raw: f64,
        copies: usize,
    ) -> Result<(), DecodeError> {
        let logprobs = query(self.model, self.source, prefix, self.vocab.len())?;
        let eos = self.vocab.eos();
        let last = prefix.len() + 1 == self.horizon;
        for token in 0..self.vocab.len() as TokenId {
            let next_raw = raw + logprobs[token as usize];
            let next_copies = copies + usize::from(self.mask[token as usize]);
            if token == eos {
                let mut tokens = prefix.clone();
                tokens.push(eos);
                let hyp = Hypothesis::complete(
                    tokens,
                    next_raw,
                    next_copies,
                    self.ln_alpha,
                    self.length_exp,
                );
                let better = self
                    .best
                    .as_ref()
                    .is_none_or(|b| rank(&hyp, b) == Ordering::Less);
                if better {
                    self.best = Some(hyp);
                }
            } else if !last {
                prefix.push(token);
                self.visit(prefix, next_raw, next_copies)?;
                prefix.pop();
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchMode {
    #[default]
    Beam,
    Exhaustive,
}

/// Best hypothesis for one source sentence.
pub fn decode_one<M: ScoringModel + ?Sized>(
    model: &M,
    source: &Sentence,
    vocab: &Vocabulary,
    config: &PenaltyConfig,
    mode: SearchMode,
) -> Result<Hypothesis, DecodeError> {
    match mode {
        SearchMode::Beam => Ok(beam_search(model, source, vocab, config)?
            .into_iter()
            .next()
            .expect("the last step always completes a hypothesis")),
        SearchMode::Exhaustive => exhaustive_decode(model, source, vocab, config),
    }
}

/// Decodes sentences in parallel; output order matches input order.
pub fn decode_corpus<M: ScoringModel + ?Sized>(
    model: &M,
    sources: &[Sentence],
    vocab: &Vocabulary,
    config: &PenaltyConfig,
    mode: SearchMode,
) -> Result<Vec<Hypothesis>, DecodeError> {
    config.validate()?;
    sources
        .par_iter()
        .map(|src| decode_one(model, src, vocab, config, mode))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub stats: CopyStats,
    pub bleu: Option<f64>,
}

/// Decodes `sources` once per alpha and reports copying ratio, CER and
/// BLEU for each run.
#[allow(clippy::too_many_arguments)]
pub fn penalty_sweep<M: ScoringModel + ?Sized>(
    model: &M,
    sources: &[Sentence],
    references: Option<&[Sentence]>,
    vocab: &Vocabulary,
    config: &PenaltyConfig,
    alphas: &[f64],
    mode: SearchMode,
    metric_config: &MetricConfig,
) -> Result<Vec<SweepRow>, DecodeError> {
    if let Some(refs) = references {
        if refs.len() != sources.len() {
            return Err(MetricsError::LineCountMismatch {
                hypotheses: sources.len(),
                references: refs.len(),
            }
            .into());
        }
    }
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let run = PenaltyConfig { alpha, ..*config };
        run.validate()?;
        let hyps = decode_corpus(model, sources, vocab, &run, mode)?;
        let corpus = crate::corpus::Corpus::new(
            sources
                .iter()
                .zip(&hyps)
                .enumerate()
                .map(|(i, (src, hyp))| crate::corpus::ParallelExample {
                    source: src.clone(),
                    hypothesis: vocab.to_sentence(&hyp.tokens),
                    reference: references.and_then(|r| r.get(i).cloned()),
                    ..Default::default()
                })
                .collect(),
        );
        rows.push(SweepRow {
            alpha,
            stats: metrics::copy_stats(&corpus, metric_config)?,
            bleu: metrics::corpus_bleu_of(&corpus, metric_config, 4)?,
        });
    }
    Ok(rows)
}

/// Copy-mask hits in a token sequence, counted independently of the
/// search. Useful for auditing returned hypotheses.
pub fn count_copies(tokens: &[TokenId], mask: &[bool]) -> usize {
    tokens.iter().filter(|&&t| mask[t as usize]).count()
}
