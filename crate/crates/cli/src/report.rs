//! JSON and TSV renderings of analysis results.
//!
//! Fractions always carry six decimals in both formats, so a JSON and a
//! TSV report of the same run show the same digits. Undefined values are
//! `null` in JSON and `NA` in TSV.

use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

use copyctl_core::{BucketedStats, CopyStats, CurvePoint, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Tsv,
}

/// A number printed with exactly six decimals.
#[derive(Debug, Clone, Copy)]
pub struct Fixed(pub f64);

impl Fixed {
    pub fn text(self) -> String {
        format!("{:.6}", self.0)
    }
}

impl Serialize for Fixed {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return serializer.serialize_none();
        }
        let raw = RawValue::from_string(self.text()).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

fn opt_text(v: Option<Fixed>) -> String {
    v.map(Fixed::text).unwrap_or_else(|| "NA".to_string())
}

fn opt_count(v: Option<u64>) -> String {
    v.map(|c| c.to_string()).unwrap_or_else(|| "NA".to_string())
}

#[derive(Debug, Clone, Serialize)]
pub struct StatsView {
    pub copy_tokens: u64,
    pub total_tokens: u64,
    pub copy_errors: Option<u64>,
    pub ratio: Fixed,
    pub ratio_pct: String,
    pub cer: Option<Fixed>,
    pub cer_pct: Option<String>,
}

impl From<&CopyStats> for StatsView {
    fn from(s: &CopyStats) -> Self {
        let cer = s.cer();
        StatsView {
            copy_tokens: s.copy_tokens,
            total_tokens: s.total_tokens,
            copy_errors: s.copy_errors,
            ratio: Fixed(s.ratio()),
            ratio_pct: format!("{:.1}%", s.ratio() * 100.0),
            cer: cer.map(Fixed),
            cer_pct: cer.map(|c| format!("{:.1}", c * 100.0)),
        }
    }
}

const STATS_HEADER: [&str; 7] = [
    "copy_tokens",
    "total_tokens",
    "copy_errors",
    "ratio",
    "ratio_pct",
    "cer",
    "cer_pct",
];

impl StatsView {
    fn cells(&self) -> Vec<String> {
        vec![
            self.copy_tokens.to_string(),
            self.total_tokens.to_string(),
            opt_count(self.copy_errors),
            self.ratio.text(),
            self.ratio_pct.clone(),
            opt_text(self.cer),
            self.cer_pct.clone().unwrap_or_else(|| "NA".to_string()),
        ]
    }
}

fn tsv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join("\t");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report values always serialize");
    s.push('\n');
    s
}

#[derive(Debug, Serialize)]
pub struct AnalyzeReport {
    pub sentences: usize,
    pub stats: StatsView,
    pub threshold: Fixed,
    pub high_overlap: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bleu: Option<Fixed>,
}

impl AnalyzeReport {
    pub fn new(
        sentences: usize,
        stats: &CopyStats,
        threshold: f64,
        high_overlap: usize,
        bleu: Option<f64>,
    ) -> Self {
        AnalyzeReport {
            sentences,
            stats: stats.into(),
            threshold: Fixed(threshold),
            high_overlap,
            bleu: bleu.map(Fixed),
        }
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Json => json(self),
            Format::Tsv => {
                let mut header = vec!["sentences"];
                header.extend(STATS_HEADER);
                header.extend(["threshold", "high_overlap"]);
                let mut row = vec![self.sentences.to_string()];
                row.extend(self.stats.cells());
                row.extend([self.threshold.text(), self.high_overlap.to_string()]);
                if let Some(bleu) = self.bleu {
                    header.push("bleu");
                    row.push(bleu.text());
                }
                tsv(&header, &[row])
            }
        }
    }
}

#[derive(Debug, Serialize)]
struct LabelledStats {
    label: String,
    #[serde(flatten)]
    stats: StatsView,
}

// Typed wrappers rather than `json!`, which would reformat the numbers.
#[derive(Serialize)]
struct CurveJson {
    points: Vec<LabelledStats>,
}

#[derive(Serialize)]
struct BucketsJson {
    total: StatsView,
    buckets: Vec<LabelledStats>,
}

#[derive(Serialize)]
struct GroupsJson<'a> {
    key: &'a str,
    groups: Vec<LabelledStats>,
}

#[derive(Serialize)]
struct SweepJson {
    rows: Vec<SweepView>,
}

fn labelled_tsv(first: &str, rows: &[LabelledStats]) -> String {
    let mut header = vec![first];
    header.extend(STATS_HEADER);
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.label.clone()];
            cells.extend(r.stats.cells());
            cells
        })
        .collect();
    tsv(&header, &rows)
}

pub fn render_curve(points: &[CurvePoint], format: Format) -> String {
    let rows: Vec<LabelledStats> = points
        .iter()
        .map(|p| LabelledStats {
            label: p.label.clone(),
            stats: (&p.stats).into(),
        })
        .collect();
    match format {
        Format::Json => json(&CurveJson { points: rows }),
        Format::Tsv => labelled_tsv("label", &rows),
    }
}

pub fn render_buckets(buckets: &BucketedStats, format: Format) -> String {
    let rows: Vec<LabelledStats> = buckets
        .buckets
        .iter()
        .map(|(name, stats)| LabelledStats {
            label: name.clone(),
            stats: stats.into(),
        })
        .collect();
    match format {
        Format::Json => json(&BucketsJson {
            total: (&buckets.total).into(),
            buckets: rows,
        }),
        Format::Tsv => {
            let mut all = vec![LabelledStats {
                label: "Total".to_string(),
                stats: (&buckets.total).into(),
            }];
            all.extend(rows);
            labelled_tsv("bucket", &all)
        }
    }
}

pub fn render_groups<'a>(
    key: &str,
    groups: impl IntoIterator<Item = (&'a String, &'a CopyStats)>,
    format: Format,
) -> String {
    let rows: Vec<LabelledStats> = groups
        .into_iter()
        .map(|(name, stats)| LabelledStats {
            label: name.clone(),
            stats: stats.into(),
        })
        .collect();
    match format {
        Format::Json => json(&GroupsJson { key, groups: rows }),
        Format::Tsv => labelled_tsv(key, &rows),
    }
}

#[derive(Debug, Serialize)]
struct SweepView {
    alpha: Fixed,
    ratio: Fixed,
    cer: Option<Fixed>,
    bleu: Option<Fixed>,
}

pub fn render_sweep(rows: &[SweepRow], format: Format) -> String {
    let views: Vec<SweepView> = rows
        .iter()
        .map(|r| SweepView {
            alpha: Fixed(r.alpha),
            ratio: Fixed(r.stats.ratio()),
            cer: r.stats.cer().map(Fixed),
            bleu: r.bleu.map(Fixed),
        })
        .collect();
    match format {
        Format::Json => json(&SweepJson { rows: views }),
        Format::Tsv => {
            let rows: Vec<Vec<String>> = views
                .iter()
                .map(|v| {
                    vec![
                        v.alpha.text(),
                        v.ratio.text(),
                        opt_text(v.cer),
                        opt_text(v.bleu),
                    ]
                })
                .collect();
            tsv(&["alpha", "ratio", "cer", "bleu"], &rows)
        }
    }
}

/// Per-sentence decoding scores, one TSV row per input line.
pub fn render_scores(hyps: &[copyctl_core::Hypothesis]) -> String {
    let rows: Vec<Vec<String>> = hyps
        .iter()
        .enumerate()
        .map(|(i, h)| {
            vec![
                (i + 1).to_string(),
                Fixed(h.raw_logprob).text(),
                Fixed(h.penalized_logprob).text(),
                h.copy_count.to_string(),
                Fixed(h.score).text(),
            ]
        })
        .collect();
    tsv(
        &[
            "line",
            "raw_logprob",
            "penalized_logprob",
            "copy_count",
            "score",
        ],
        &rows,
    )
}
