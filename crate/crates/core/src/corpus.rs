//! Article/summary records: parsing, cleaning, compression-ratio filtering
//! and length statistics.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::TokenCounter;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate record id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("record {id}: article has no tokens")]
    EmptyArticle { id: String },
    #[error("record {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Bbc,
    Dw,
    #[default]
    Other,
}

/// One article/summary pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    #[serde(default)]
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    #[serde(default)]
    pub title: String,
    pub article: String,
    pub summary: String,
}

impl Record {
    /// Article and summary must be non-blank.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let fail = |message: &str| CorpusError::Invalid {
            id: self.id.clone(),
            message: message.to_string(),
        };
        if self.article.trim().is_empty() {
            return Err(fail("article is empty"));
        }
        if self.summary.trim().is_empty() {
            return Err(fail("summary is empty"));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    #[serde(default)]
    source: Source,
    url: Option<String>,
    #[serde(default)]
    title: String,
    article: String,
    summary: String,
}

/// Parses a line-delimited JSON record stream. Blank lines are skipped;
/// records without an id get their zero-padded 0-based line index.
pub fn parse_records<R: BufRead>(reader: R) -> Result<Vec<Record>, CorpusError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        let id = raw.id.unwrap_or_else(|| format!("{idx:06}"));
        if !ids.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { line: lineno, id });
        }
        out.push(Record {
            id,
            source: raw.source,
            url: raw.url,
            title: raw.title,
            article: raw.article,
            summary: raw.summary,
        });
    }
    Ok(out)
}

pub fn read_records(path: impl AsRef<std::path::Path>) -> Result<Vec<Record>, CorpusError> {
    let f = std::fs::File::open(path)?;
    parse_records(std::io::BufReader::new(f))
}

/// Writes any serializable rows as one JSON object per line.
pub fn write_jsonl<W: Write, T: Serialize>(mut w: W, rows: &[T]) -> std::io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

static URL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[ \t]*(?:[A-Za-z][A-Za-z0-9+.\-]*://|www\.)\S*").expect("valid URL regex")
});

/// Text cleaning rules: URL removal, caption-line removal and blank-line
/// collapsing.
#[derive(Debug, Clone)]
pub struct Cleaner {
    caption_markers: Vec<String>,
}

impl Default for Cleaner {
    fn default() -> Self {
        Self::new(
            [
                "تصویر:",
                "تصویر کے کاپی رائٹ",
                "فائل فوٹو",
                "Image caption",
                "Image copyright",
                "Caption:",
                "[caption]",
            ]
            .map(String::from),
        )
    }
}

impl Cleaner {
    pub fn new(caption_markers: impl IntoIterator<Item = String>) -> Self {
        Self {
            caption_markers: caption_markers
                .into_iter()
                .filter(|m| !m.trim().is_empty())
                .collect(),
        }
    }

    pub fn caption_markers(&self) -> &[String] {
        &self.caption_markers
    }

    fn is_caption(&self, line: &str) -> bool {
        let line = line.trim_start();
        self.caption_markers.iter().any(|m| line.starts_with(m.as_str()))
    }

    /// Idempotent: cleaning clean text returns it unchanged.
    pub fn clean(&self, raw: &str) -> String {
        let mut lines: Vec<String> = Vec::new();
        for line in raw.lines() {
            let had_url = URL_RE.is_match(line);
            let mut line = URL_RE.replace_all(line, "").trim_end().to_string();
            if had_url {
                line = line.trim_start().to_string();
            }
            if self.is_caption(&line) {
                continue;
            }
            let blank = line.trim().is_empty();
            if blank && lines.last().is_some_and(|l| l.is_empty()) {
                continue;
            }
            lines.push(if blank { String::new() } else { line });
        }
        lines.join("\n").trim().to_string()
    }
}

/// [`Cleaner::clean`] with the default caption markers.
pub fn clean_text(raw: &str) -> String {
    Cleaner::default().clean(raw)
}

/// `100 × tokens(summary) / tokens(article)`.
pub fn compression_ratio(rec: &Record, tok: &dyn TokenCounter) -> Result<f64, CorpusError> {
    let article = tok.count_tokens(&rec.article);
    if article == 0 {
        return Err(CorpusError::EmptyArticle { id: rec.id.clone() });
    }
    Ok(100.0 * tok.count_tokens(&rec.summary) as f64 / article as f64)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partition {
    pub kept: Vec<Record>,
    pub removed: Vec<Record>,
}

/// Removes records whose compression ratio is strictly above
/// `max_ratio_pct`. Both halves keep input order.
pub fn filter_corpus(
    records: Vec<Record>,
    max_ratio_pct: f64,
    tok: &dyn TokenCounter,
) -> Result<Partition, CorpusError> {
    let ratios: Vec<f64> = records
        .par_iter()
        .map(|r| compression_ratio(r, tok))
        .collect::<Result<_, _>>()?;
    let mut out = Partition::default();
    for (rec, ratio) in records.into_iter().zip(ratios) {
        if ratio > max_ratio_pct {
            out.removed.push(rec);
        } else {
            out.kept.push(rec);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    /// Median is the lower of the two middle values for even counts.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: sorted[(sorted.len() - 1) / 2],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub count: usize,
    pub article_tokens: Summary,
    pub summary_tokens: Summary,
    pub compression_ratio_pct: Summary,
}

impl CorpusStats {
    pub fn to_table(&self) -> String {
        let mut out = format!("records: {}\n", self.count);
        out.push_str(&format!(
            "{:<24}{:>12}{:>12}{:>12}{:>12}\n",
            "", "min", "max", "mean", "median"
        ));
        for (name, s) in [
            ("article tokens", &self.article_tokens),
            ("summary tokens", &self.summary_tokens),
            ("compression ratio %", &self.compression_ratio_pct),
        ] {
            out.push_str(&format!(
                "{:<24}{:>12.2}{:>12.2}{:>12.2}{:>12.2}\n",
                name, s.min, s.max, s.mean, s.median
            ));
        }
        out
    }
}

pub fn corpus_stats(records: &[Record], tok: &dyn TokenCounter) -> Result<CorpusStats, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let counts: Vec<(usize, usize)> = records
        .par_iter()
        .map(|r| (tok.count_tokens(&r.article), tok.count_tokens(&r.summary)))
        .collect();
    let mut ratios = Vec::with_capacity(records.len());
    for (rec, &(a, s)) in records.iter().zip(&counts) {
        if a == 0 {
            return Err(CorpusError::EmptyArticle { id: rec.id.clone() });
        }
        ratios.push(100.0 * s as f64 / a as f64);
    }
    let articles: Vec<f64> = counts.iter().map(|c| c.0 as f64).collect();
    let summaries: Vec<f64> = counts.iter().map(|c| c.1 as f64).collect();
    Ok(CorpusStats {
        count: records.len(),
        article_tokens: Summary::of(&articles).unwrap(),
        summary_tokens: Summary::of(&summaries).unwrap(),
        compression_ratio_pct: Summary::of(&ratios).unwrap(),
    })
}
