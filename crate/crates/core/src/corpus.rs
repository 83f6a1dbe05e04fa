//! Parallel text ingestion, whitespace tokenization, subword merging and
//! punctuation classification.
//!
//! Every metric in this crate works on words. Subword output (BPE `@@`
//! continuations or sentencepiece `▁` pieces) is merged back into words
//! before anything is counted.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;
use unicode_general_category::{get_general_category, GeneralCategory};

const BPE_MARKER: &str = "@@";
const SP_MARKER: char = '\u{2581}';

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: has {found} lines, expected {expected} (misaligned corpus)", path.display())]
    LineCountMismatch {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {tags} POS tags for {tokens} hypothesis tokens")]
    PosLengthMismatch {
        line: usize,
        tags: usize,
        tokens: usize,
    },
    #[error("{}:{line}: malformed metadata field {field:?} (expected key=value)", path.display())]
    BadMeta {
        path: PathBuf,
        line: usize,
        field: String,
    },
}

/// A single word. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    surface: String,
    is_punct: bool,
}

impl Token {
    /// Returns `None` for an empty surface.
    pub fn new(surface: impl Into<String>) -> Option<Self> {
        let surface = surface.into();
        if surface.is_empty() {
            return None;
        }
        let is_punct = is_punct_str(&surface);
        Some(Token { surface, is_punct })
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn is_punct(&self) -> bool {
        self.is_punct
    }
}

/// True iff `c` is in one of the punctuation (P*) or symbol (S*) categories.
pub fn is_punct_char(c: char) -> bool {
    use GeneralCategory::*;
    matches!(
        get_general_category(c),
        OtherPunctuation
            | OpenPunctuation
            | ClosePunctuation
            | InitialPunctuation
            | FinalPunctuation
            | DashPunctuation
            | ConnectorPunctuation
            | MathSymbol
            | CurrencySymbol
            | ModifierSymbol
            | OtherSymbol
    )
}

/// Whole-token test: every character must be punctuation or a symbol.
pub fn is_punct_str(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_punct_char)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub raw: String,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(Token::surface)
    }

    /// Token surfaces joined by single spaces.
    pub fn detokenized(&self) -> String {
        self.surfaces().collect::<Vec<_>>().join(" ")
    }
}

/// Splits `line` on Unicode whitespace, optionally merging subword pieces
/// back into words first.
pub fn tokenize(line: &str, merge_subwords: bool) -> Sentence {
    let pieces: Vec<&str> = line.split_whitespace().collect();
    let words: Vec<String> = if merge_subwords {
        merge_pieces(&pieces)
    } else {
        pieces.iter().map(|p| p.to_string()).collect()
    };
    Sentence {
        tokens: words.into_iter().filter_map(Token::new).collect(),
        raw: line.to_string(),
    }
}

fn merge_pieces(pieces: &[&str]) -> Vec<String> {
    let words = merge_bpe(pieces);
    if words.iter().any(|w| w.starts_with(SP_MARKER)) {
        merge_sentencepiece(&words)
    } else {
        words
    }
}

// A piece ending in "@@" continues into its successor.
fn merge_bpe(pieces: &[&str]) -> Vec<String> {
    let mut out = Vec::with_capacity(pieces.len());
    let mut buf = String::new();
    for piece in pieces {
        if piece.ends_with(BPE_MARKER) {
            buf.push_str(piece.trim_end_matches(BPE_MARKER));
        } else {
            buf.push_str(piece);
            out.push(std::mem::take(&mut buf));
        }
    }
    if !buf.is_empty() {
        out.push(buf);
    }
    out.retain(|w| !w.is_empty());
    out
}

// A piece starting with "▁" opens a new word; any other piece extends the
// current one.
fn merge_sentencepiece(pieces: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(pieces.len());
    let mut current: Option<String> = None;
    for piece in pieces {
        if piece.starts_with(SP_MARKER) {
            if let Some(word) = current.take() {
                out.push(word);
            }
            current = Some(piece.trim_start_matches(SP_MARKER).to_string());
        } else {
            current.get_or_insert_with(String::new).push_str(piece);
        }
    }
    out.extend(current);
    out.retain(|w| !w.is_empty());
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParallelExample {
    pub source: Sentence,
    pub hypothesis: Sentence,
    pub reference: Option<Sentence>,
    pub meta: BTreeMap<String, String>,
    /// Aligned one-to-one with `hypothesis.tokens` when present.
    pub pos_tags: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub examples: Vec<ParallelExample>,
}

impl Corpus {
    pub fn new(examples: Vec<ParallelExample>) -> Self {
        Corpus { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn has_references(&self) -> bool {
        self.examples.iter().all(|ex| ex.reference.is_some())
    }
}

/// Paths of the line-aligned files making up a corpus.
#[derive(Debug, Clone, Default)]
pub struct CorpusPaths {
    pub source: PathBuf,
    pub hypothesis: PathBuf,
    pub reference: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub pos: Option<PathBuf>,
}

impl CorpusPaths {
    pub fn new(source: impl Into<PathBuf>, hypothesis: impl Into<PathBuf>) -> Self {
        CorpusPaths {
            source: source.into(),
            hypothesis: hypothesis.into(),
            ..Default::default()
        }
    }

    pub fn with_reference(mut self, path: impl Into<PathBuf>) -> Self {
        self.reference = Some(path.into());
        self
    }

    pub fn with_meta(mut self, path: impl Into<PathBuf>) -> Self {
        self.meta = Some(path.into());
        self
    }

    pub fn with_pos(mut self, path: impl Into<PathBuf>) -> Self {
        self.pos = Some(path.into());
        self
    }
}

/// Reads a UTF-8 file as lines. LF and CRLF endings are both accepted.
pub fn read_lines(path: &Path) -> Result<Vec<String>, CorpusError> {
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Reads a text file and tokenizes every line.
pub fn load_sentences(path: &Path, merge_subwords: bool) -> Result<Vec<Sentence>, CorpusError> {
    Ok(read_lines(path)?
        .iter()
        .map(|line| tokenize(line, merge_subwords))
        .collect())
}

fn check_len(path: &Path, expected: usize, found: usize) -> Result<(), CorpusError> {
    if expected != found {
        return Err(CorpusError::LineCountMismatch {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Parses one metadata line of tab-separated `key=value` fields.
pub fn parse_meta_line(
    path: &Path,
    line_no: usize,
    line: &str,
) -> Result<BTreeMap<String, String>, CorpusError> {
    let mut meta = BTreeMap::new();
    for field in line.split('\t').map(str::trim).filter(|f| !f.is_empty()) {
        match field.split_once('=') {
            Some((key, value)) if !key.trim().is_empty() => {
                meta.insert(key.trim().to_string(), value.trim().to_string());
            }
            _ => {
                return Err(CorpusError::BadMeta {
                    path: path.to_path_buf(),
                    line: line_no,
                    field: field.to_string(),
                })
            }
        }
    }
    Ok(meta)
}

/// Loads line-aligned parallel files into a [`Corpus`]. Line `i` of every
/// file forms example `i`.
pub fn load_parallel(paths: &CorpusPaths, merge_subwords: bool) -> Result<Corpus, CorpusError> {
    let sources = load_sentences(&paths.source, merge_subwords)?;
    let hypotheses = load_sentences(&paths.hypothesis, merge_subwords)?;
    let n = sources.len();
    check_len(&paths.hypothesis, n, hypotheses.len())?;

    let references = match &paths.reference {
        Some(path) => {
            let refs = load_sentences(path, merge_subwords)?;
            check_len(path, n, refs.len())?;
            Some(refs)
        }
        None => None,
    };

    let metas = match &paths.meta {
        Some(path) => {
            let lines = read_lines(path)?;
            check_len(path, n, lines.len())?;
            let parsed = lines
                .iter()
                .enumerate()
                .map(|(i, line)| parse_meta_line(path, i + 1, line))
                .collect::<Result<Vec<_>, _>>()?;
            Some(parsed)
        }
        None => None,
    };

    let pos = match &paths.pos {
        Some(path) => {
            let lines = read_lines(path)?;
            check_len(path, n, lines.len())?;
            Some(lines)
        }
        None => None,
    };

    let mut references = references.map(Vec::into_iter);
    let mut metas = metas.map(Vec::into_iter);
    let mut pos = pos.map(Vec::into_iter);

    let mut examples = Vec::with_capacity(n);
    for (i, (source, hypothesis)) in sources.into_iter().zip(hypotheses).enumerate() {
        let pos_tags = match pos.as_mut().and_then(Iterator::next) {
            Some(line) => {
                let tags: Vec<String> = line.split_whitespace().map(str::to_string).collect();
                if tags.len() != hypothesis.len() {
                    return Err(CorpusError::PosLengthMismatch {
                        line: i + 1,
                        tags: tags.len(),
                        tokens: hypothesis.len(),
                    });
                }
                Some(tags)
            }
            None => None,
        };
        examples.push(ParallelExample {
            source,
            hypothesis,
            reference: references.as_mut().and_then(Iterator::next),
            meta: metas.as_mut().and_then(Iterator::next).unwrap_or_default(),
            pos_tags,
        });
    }
    Ok(Corpus { examples })
}
