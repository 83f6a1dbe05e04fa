//! A lexicon-driven [`ScoringModel`] whose output distribution can be
//! enumerated exactly.
//!
//! Step `t` emits a translation of source word `t`, drawn from that word's
//! lexicon entry (which may list the word itself, i.e. a copy). After the
//! last source word the model puts all mass on `</s>`. Source words with
//! no entry translate to `<unk>` with probability 1.
//!
//! Lexicon files hold one entry per line, either
//! `word<TAB>target:prob,target:prob` or `word → target:prob, target:prob`.
//! Lines starting with `#` are comments.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::corpus::Sentence;
use crate::decoder::{ScoringModel, TokenId, Vocabulary};

/// Stand-in for `ln 0`.
pub const LOG_FLOOR: f64 = -1e9;

const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("bad distribution for {0:?}: probabilities must be positive and sum to 1")]
    BadDistribution(String),
    #[error("duplicate lexicon entry for {0:?}")]
    DuplicateEntry(String),
    #[error("prefix of length {prefix} is past the end of a {source_len}-word source")]
    PrefixTooLong { prefix: usize, source_len: usize },
}

/// One parsed lexicon line: a source word and its target distribution.
pub type LexiconEntry = (String, Vec<(String, f64)>);

#[derive(Debug, Clone)]
pub struct LexiconModel {
    vocab: Vocabulary,
    // source word -> (target id, ln p)
    entries: HashMap<String, Vec<(TokenId, f64)>>,
}

impl LexiconModel {
    /// Validates the entries and builds the vocabulary from every target
    /// word, in order of first appearance.
    pub fn from_entries(entries: Vec<LexiconEntry>) -> Result<Self, LexiconError> {
        let vocab = Vocabulary::new(
            entries
                .iter()
                .flat_map(|(_, dist)| dist.iter().map(|(t, _)| t.clone())),
        );
        let mut table = HashMap::with_capacity(entries.len());
        for (word, dist) in entries {
            if table.contains_key(&word) {
                return Err(LexiconError::DuplicateEntry(word));
            }
            let sum: f64 = dist.iter().map(|(_, p)| p).sum();
            let positive = dist.iter().all(|(_, p)| *p > 0.0 && p.is_finite());
            let mut targets: Vec<&str> = dist.iter().map(|(t, _)| t.as_str()).collect();
            targets.sort_unstable();
            targets.dedup();
            if dist.is_empty()
                || !positive
                || (sum - 1.0).abs() > SUM_TOLERANCE
                || targets.len() != dist.len()
            {
                return Err(LexiconError::BadDistribution(word));
            }
            let row = dist
                .iter()
                .map(|(t, p)| (vocab.id(t).expect("targets are in the vocabulary"), p.ln()))
                .collect();
            table.insert(word, row);
        }
        Ok(LexiconModel {
            vocab,
            entries: table,
        })
    }

    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(entry) = parse_line(i + 1, line)? {
                entries.push(entry);
            }
        }
        Self::from_entries(entries)
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Log-probabilities of `word`'s targets, or `None` for an unknown word.
    pub fn entry(&self, word: &str) -> Option<&[(TokenId, f64)]> {
        self.entries.get(word).map(Vec::as_slice)
    }
}

/// Reads and validates a lexicon file.
pub fn build_lexicon(path: &Path) -> Result<LexiconModel, LexiconError> {
    let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    LexiconModel::parse(&text)
}

fn parse_line(line_no: usize, line: &str) -> Result<Option<LexiconEntry>, LexiconError> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return Ok(None);
    }
    let parse_err = |message: String| LexiconError::Parse {
        line: line_no,
        message,
    };
    let (word, rest) = line
        .split_once('\t')
        .or_else(|| line.split_once('→'))
        .or_else(|| line.split_once("->"))
        .ok_or_else(|| parse_err("expected a tab or '→' after the source word".into()))?;
    let word = word.trim();
    if word.is_empty() || word.contains(char::is_whitespace) {
        return Err(parse_err(format!("bad source word {word:?}")));
    }
    let mut dist = Vec::new();
    for item in rest.split(',').map(str::trim) {
        let (target, prob) = item
            .rsplit_once(':')
            .ok_or_else(|| parse_err(format!("expected target:prob, got {item:?}")))?;
        let target = target.trim();
        if target.is_empty() || target.contains(char::is_whitespace) {
            return Err(parse_err(format!("bad target word {target:?}")));
        }
        let prob: f64 = prob
            .trim()
            .parse()
            .map_err(|_| parse_err(format!("bad probability in {item:?}")))?;
        dist.push((target.to_string(), prob));
    }
    Ok(Some((word.to_string(), dist)))
}

impl ScoringModel for LexiconModel {
    type Error = LexiconError;

    fn next_logprobs(
        &self,
        source: &Sentence,
        prefix: &[TokenId],
    ) -> Result<Vec<f64>, LexiconError> {
        let step = prefix.len();
        let n = source.len();
        if step > n {
            return Err(LexiconError::PrefixTooLong {
                prefix: step,
                source_len: n,
            });
        }
        let mut out = vec![LOG_FLOOR; self.vocab.len()];
        if step == n {
            out[self.vocab.eos() as usize] = 0.0;
            return Ok(out);
        }
        match self.entries.get(source.tokens[step].surface()) {
            Some(row) => {
                for &(id, lp) in row {
                    out[id as usize] = lp;
                }
            }
            None => out[self.vocab.unk() as usize] = 0.0,
        }
        Ok(out)
    }

    fn max_output_len(&self, source: &Sentence) -> Option<usize> {
        Some(source.len() + 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    fn hussein() -> LexiconModel {
        LexiconModel::parse("Hussein → Hussein:0.6, X:0.4\n").unwrap()
    }

    #[test]
    fn arrow_and_tab_forms_agree() {
        let a = hussein();
        let b = LexiconModel::parse("# comment\n\nHussein\tHussein:0.6,X:0.4\n").unwrap();
        assert_eq!(a.vocab(), b.vocab());
        assert_eq!(a.entry("Hussein"), b.entry("Hussein"));
    }

    #[test]
    fn first_step_logprobs() {
        let m = hussein();
        let v = m.vocab();
        let lps = m.next_logprobs(&tokenize("Hussein", false), &[]).unwrap();
        assert_eq!(lps.len(), v.len());
        assert_eq!(lps[v.id("Hussein").unwrap() as usize], 0.6f64.ln());
        assert_eq!(lps[v.id("X").unwrap() as usize], 0.4f64.ln());
        for id in [v.bos(), v.eos(), v.unk()] {
            assert_eq!(lps[id as usize], LOG_FLOOR);
        }
    }

    #[test]
    fn eos_after_last_word() {
        let m = hussein();
        let v = m.vocab();
        let src = tokenize("Hussein", false);
        let lps = m.next_logprobs(&src, &[v.id("X").unwrap()]).unwrap();
        assert_eq!(lps[v.eos() as usize], 0.0);
        assert_eq!(
            lps.iter().filter(|&&lp| lp == LOG_FLOOR).count(),
            v.len() - 1
        );
        assert!(matches!(
            m.next_logprobs(&src, &[3, 3]),
            Err(LexiconError::PrefixTooLong {
                prefix: 2,
                source_len: 1
            })
        ));
    }

    #[test]
    fn unknown_words_become_unk() {
        let m = hussein();
        let lps = m.next_logprobs(&tokenize("Tantawi", false), &[]).unwrap();
        assert_eq!(lps[m.vocab().unk() as usize], 0.0);
    }

    #[test]
    fn one_step_sequence_probability_matches_enumeration() {
        let m = hussein();
        let v = m.vocab();
        let src = tokenize("Hussein", false);
        let first = m.next_logprobs(&src, &[]).unwrap();
        // enumerate every (w, eos) output
        let mut total = 0.0;
        let mut p_hussein = 0.0;
        for w in 0..v.len() as TokenId {
            let second = m.next_logprobs(&src, &[w]).unwrap();
            let p = (first[w as usize] + second[v.eos() as usize]).exp();
            total += p;
            if w == v.id("Hussein").unwrap() {
                p_hussein = p;
            }
        }
        assert!((p_hussein - 0.6).abs() < 1e-12);
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bad_distributions() {
        for text in [
            "w\ta:0.6,b:0.5",
            "w\ta:1.2,b:-0.2",
            "w\ta:0.0,b:1.0",
            "w\ta:0.5,a:0.5",
        ] {
            assert!(
                matches!(LexiconModel::parse(text), Err(LexiconError::BadDistribution(w)) if w == "w"),
                "{text}"
            );
        }
    }

    #[test]
    fn duplicates_and_parse_errors() {
        assert!(matches!(
            LexiconModel::parse("w\ta:1\nw\tb:1\n"),
            Err(LexiconError::DuplicateEntry(w)) if w == "w"
        ));
        assert!(matches!(
            LexiconModel::parse("ok\ta:1\nno separator here\n"),
            Err(LexiconError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            LexiconModel::parse("w\ta=1"),
            Err(LexiconError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            LexiconModel::parse("w\ta:x"),
            Err(LexiconError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn sum_tolerance() {
        assert!(LexiconModel::parse("w\ta:0.3333333,b:0.6666667").is_ok());
        assert!(LexiconModel::parse("w\ta:0.333,b:0.666").is_err());
    }

    #[test]
    fn position_monotone() {
        let m = LexiconModel::parse("a\ta:0.5,b:0.5\nb\tb:0.7,c:0.3\n").unwrap();
        let src = tokenize("a b", false);
        let v = m.vocab();
        let p1 = m.next_logprobs(&src, &[v.id("a").unwrap()]).unwrap();
        let p2 = m.next_logprobs(&src, &[v.id("c").unwrap()]).unwrap();
        assert_eq!(p1, p2);
    }
}
