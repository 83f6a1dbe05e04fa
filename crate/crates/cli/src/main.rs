//! `copyctl`: copying analysis and copy-penalized decoding from the
//! command line.
//!
//! Exit codes: 0 on success, 2 on bad flags or unreadable/misaligned
//! input, 3 when a computed result violates an internal invariant.

mod report;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use copyctl_core::corpus::{self, CorpusPaths};
use copyctl_core::decoder::{self, count_copies, PenaltyConfig, SearchMode};
use copyctl_core::metrics::{self, MetricConfig, TagMap};
use copyctl_core::toymodel::{self, LexiconModel};
use copyctl_core::{Hypothesis, Sentence};

use report::{AnalyzeReport, Format};

const THREADS_ENV: &str = "COPYCTL_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "copyctl",
    version,
    about = "Measure and control copying in translation outputs"
)]
struct Cli {
    #[command(flatten)]
    common: CommonOpts,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonOpts {
    /// Compare words case-insensitively.
    #[arg(long, global = true)]
    lowercase: bool,
    /// Merge BPE (`@@`) and sentencepiece (`▁`) pieces into words.
    #[arg(long, global = true)]
    merge_subwords: bool,
    /// Count punctuation in the copying-ratio denominator.
    #[arg(long, global = true)]
    keep_punct_denominator: bool,
    #[arg(long, global = true, value_enum, default_value = "json")]
    format: Format,
    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overlap above which a sentence counts as high-overlap.
    #[arg(long, global = true, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct DecodeOpts {
    /// Copying penalty (1 disables it).
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    /// Length-normalization exponent.
    #[arg(long, default_value_t = 0.0)]
    length_exp: f64,
    /// Maximum output length including the end-of-sentence token.
    #[arg(long, default_value_t = 100)]
    max_len: usize,
    /// Enumerate every output instead of running beam search.
    #[arg(long)]
    oracle: bool,
}

impl DecodeOpts {
    fn penalty(&self) -> PenaltyConfig {
        PenaltyConfig {
            alpha: self.alpha,
            length_exp: self.length_exp,
            beam: self.beam,
            max_len: self.max_len,
        }
    }

    fn mode(&self) -> SearchMode {
        if self.oracle {
            SearchMode::Exhaustive
        } else {
            SearchMode::Beam
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Copying ratio, CER, high-overlap count and BLEU for one system.
    Analyze {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
    },
    /// Ratio and CER for a sequence of checkpoint outputs.
    Curve {
        #[arg(long)]
        src: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Hypothesis files or glob patterns, in curve order.
        #[arg(required = true)]
        hyps: Vec<String>,
    },
    /// Ratio and CER per part-of-speech bucket.
    Pos {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// One space-separated tag sequence per hypothesis line.
        #[arg(long)]
        pos: PathBuf,
        /// `tag bucket` lines; defaults to PROPN, ADP, NUM, NOUN and Others.
        #[arg(long)]
        tagmap: Option<PathBuf>,
    },
    /// Ratio and CER grouped by a metadata key.
    Group {
        #[arg(long)]
        src: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        /// Tab-separated `key=value` fields, one line per sentence.
        #[arg(long)]
        meta: PathBuf,
        #[arg(long)]
        key: String,
    },
    /// Translate with a lexicon model under a copying penalty.
    Decode {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[command(flatten)]
        decode: DecodeOpts,
        /// Also write per-sentence log-probabilities and copy counts here.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Decode once per copying penalty and tabulate ratio, CER and BLEU.
    Sweep {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        src: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[command(flatten)]
        decode: DecodeOpts,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("internal invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

fn input<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Input(e.to_string())
}

fn invalid<T>(msg: String) -> Result<T, CliError> {
    Err(CliError::Input(msg))
}

impl Cli {
    /// Flag checks that need no file access.
    fn validate(&self) -> Result<(), CliError> {
        let t = self.common.threshold;
        if !(0.0..=1.0).contains(&t) {
            return invalid(format!("--threshold must be in [0, 1], got {t}"));
        }
        match &self.command {
            Command::Decode { decode, .. } => decode.penalty().validate().map_err(input),
            Command::Sweep { decode, alphas, .. } => {
                decode.penalty().validate().map_err(input)?;
                if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
                    return invalid(format!("--alphas must all be positive, got {a}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn metric_config(&self) -> MetricConfig {
        MetricConfig {
            lowercase: self.common.lowercase,
            keep_punct_denominator: self.common.keep_punct_denominator,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| {
            CliError::Input(format!(
                "{THREADS_ENV} must be a positive integer, got {value:?}"
            ))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Input(e.to_string()))
}

fn expand_hyps(patterns: &[String]) -> Result<Vec<PathBuf>, CliError> {
    let mut paths = Vec::new();
    for pattern in patterns {
        if !pattern.contains(['*', '?', '[']) {
            paths.push(PathBuf::from(pattern));
            continue;
        }
        let mut matched: Vec<PathBuf> = glob::glob(pattern)
            .map_err(|e| CliError::Input(format!("bad pattern {pattern:?}: {e}")))?
            .collect::<Result<_, _>>()
            .map_err(input)?;
        if matched.is_empty() {
            return invalid(format!("pattern {pattern:?} matched no files"));
        }
        matched.sort();
        paths.extend(matched);
    }
    Ok(paths)
}

fn check_stats(stats: &copyctl_core::CopyStats, what: &str) -> Result<(), CliError> {
    if stats.is_consistent() {
        Ok(())
    } else {
        Err(CliError::Invariant(format!(
            "{what}: inconsistent counts {stats:?}"
        )))
    }
}

fn load_lexicon(path: &Path) -> Result<LexiconModel, CliError> {
    toymodel::build_lexicon(path)
        .map_err(|e| CliError::Input(format!("lexicon {}: {e}", path.display())))
}

fn load_sources(path: &Path, merge: bool) -> Result<Vec<Sentence>, CliError> {
    corpus::load_sentences(path, merge).map_err(input)
}

/// Re-derives each hypothesis's copy count and penalized score.
fn audit(
    hyps: &[Hypothesis],
    sources: &[Sentence],
    model: &LexiconModel,
    alpha: f64,
) -> Result<(), CliError> {
    let ln_alpha = alpha.ln();
    for (i, (h, src)) in hyps.iter().zip(sources).enumerate() {
        let copies = count_copies(&h.tokens, &decoder::copy_mask(src, model.vocab()));
        let expected = h.raw_logprob + copies as f64 * ln_alpha;
        if copies != h.copy_count || (h.penalized_logprob - expected).abs() > 1e-12 {
            return Err(CliError::Invariant(format!(
                "line {}: score accounting mismatch",
                i + 1
            )));
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = cli.metric_config();
    let merge = cli.common.merge_subwords;
    let format = cli.common.format;

    match &cli.command {
        Command::Analyze {
            src,
            hyp,
            reference,
        } => {
            let mut paths = CorpusPaths::new(src, hyp);
            paths.reference = reference.clone();
            let corpus = corpus::load_parallel(&paths, merge).map_err(input)?;
            let stats = metrics::copy_stats(&corpus, &cfg).map_err(input)?;
            check_stats(&stats, "corpus")?;
            let high = metrics::count_high_overlap(&corpus, &cfg, cli.common.threshold);
            let bleu = metrics::corpus_bleu_of(&corpus, &cfg, 4).map_err(input)?;
            Ok(
                AnalyzeReport::new(corpus.len(), &stats, cli.common.threshold, high, bleu)
                    .render(format),
            )
        }
        Command::Curve {
            src,
            reference,
            hyps,
        } => {
            let hyps = expand_hyps(hyps)?;
            let points =
                metrics::learning_curve(src, reference, &hyps, merge, &cfg).map_err(input)?;
            for p in &points {
                check_stats(&p.stats, &p.label)?;
            }
            Ok(report::render_curve(&points, format))
        }
        Command::Pos {
            src,
            hyp,
            reference,
            pos,
            tagmap,
        } => {
            let tag_map = match tagmap {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                    TagMap::parse(&text).map_err(|line| {
                        CliError::Input(format!("{}:{line}: expected `tag bucket`", path.display()))
                    })?
                }
                None => TagMap::default(),
            };
            let paths = CorpusPaths::new(src, hyp)
                .with_reference(reference)
                .with_pos(pos);
            let corpus = corpus::load_parallel(&paths, merge).map_err(input)?;
            let buckets = metrics::bucket_by_pos(&corpus, &cfg, &tag_map).map_err(input)?;
            check_stats(&buckets.total, "total")?;
            let copies: u64 = buckets.buckets.iter().map(|(_, s)| s.copy_tokens).sum();
            if copies != buckets.total.copy_tokens {
                return Err(CliError::Invariant(
                    "bucket copies do not sum to the total".into(),
                ));
            }
            Ok(report::render_buckets(&buckets, format))
        }
        Command::Group {
            src,
            hyp,
            reference,
            meta,
            key,
        } => {
            let mut paths = CorpusPaths::new(src, hyp).with_meta(meta);
            paths.reference = reference.clone();
            let corpus = corpus::load_parallel(&paths, merge).map_err(input)?;
            let groups = metrics::group_by_key(&corpus, &cfg, key).map_err(input)?;
            for (name, stats) in &groups {
                check_stats(stats, name)?;
            }
            Ok(report::render_groups(key, &groups, format))
        }
        Command::Decode {
            lexicon,
            src,
            decode,
            scores,
        } => {
            let model = load_lexicon(lexicon)?;
            let sources = load_sources(src, merge)?;
            let hyps = decoder::decode_corpus(
                &model,
                &sources,
                model.vocab(),
                &decode.penalty(),
                decode.mode(),
            )
            .map_err(input)?;
            audit(&hyps, &sources, &model, decode.alpha)?;
            if let Some(path) = scores {
                write_output(Some(path), &report::render_scores(&hyps))?;
            }
            let mut out = String::new();
            for h in &hyps {
                out.push_str(&model.vocab().to_sentence(&h.tokens).raw);
                out.push('\n');
            }
            Ok(out)
        }
        Command::Sweep {
            lexicon,
            src,
            reference,
            alphas,
            decode,
        } => {
            let model = load_lexicon(lexicon)?;
            let sources = load_sources(src, merge)?;
            let references = load_sources(reference, merge)?;
            let rows = decoder::penalty_sweep(
                &model,
                &sources,
                Some(&references),
                model.vocab(),
                &decode.penalty(),
                alphas,
                decode.mode(),
                &cfg,
            )
            .map_err(|e| CliError::Input(format!("{}: {e}", reference.display())))?;
            for r in &rows {
                check_stats(&r.stats, &format!("alpha {}", r.alpha))?;
            }
            Ok(report::render_sweep(&rows, format))
        }
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(path) => {
            fs::write(path, text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
        }
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(input)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = cli
        .validate()
        .and_then(|_| configure_threads())
        .and_then(|_| run(&cli))
        .and_then(|text| write_output(cli.common.out.as_deref(), &text));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("copyctl: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
