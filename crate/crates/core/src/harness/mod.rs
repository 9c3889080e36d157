//! Batch evaluation: extractive runs, scoring of externally generated
//! summaries, human-evaluation aggregation and the annotation service.

mod human;
mod server;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{corpus_stats, CorpusError, Record};
use crate::embedding::Provider;
use crate::extractive::{summarize_extractive, ExtractiveError, SummaryTarget};
use crate::metrics::{embed_score, rouge_l, rouge_n, rouge_tokens, MetricsError, ScoreTriple};
use crate::text::{TokenCounter, WordCounter};

pub use human::{
    aggregate_human_eval, read_scores, stratified_sample, ComparisonRow, HumanReport, HumanScore,
    SummaryHumanScore, SystemHumanScore, MAX_SCORE,
};
pub use server::{
    blind_token, serve, serve_annotation, shuffled_tasks, AnnotationConfig, AnnotationService,
    SampleCandidate, SampleItem, TaskView,
};

/// Human-evaluation sample size per dataset.
pub const DEFAULT_HUMAN_SAMPLE: usize = 20;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("record {id}: {source}")]
    Summarize {
        id: String,
        #[source]
        source: ExtractiveError,
    },
    #[error("record {id}: {source}")]
    Score {
        id: String,
        #[source]
        source: MetricsError,
    },
    #[error("pair {index}: {side} is empty")]
    EmptyPairMember { index: usize, side: &'static str },
    #[error("score record {index}: {message}")]
    InvalidScore { index: usize, message: String },
    #[error("duplicate score for annotator {annotator:?}, summary {summary_id:?}, system {system:?}")]
    DuplicateScore {
        annotator: String,
        summary_id: String,
        system: String,
    },
    #[error("annotation sample: {0}")]
    BadSample(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Evaluation run settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub system: String,
    pub dataset: String,
    /// `None` uses the dataset's mean compression ratio.
    pub target: Option<SummaryTarget>,
    pub seed: u64,
    pub include_punctuation: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            system: "extractive".into(),
            dataset: "dataset".into(),
            target: None,
            seed: 0,
            include_punctuation: false,
        }
    }
}

/// Metric battery for one reference/generated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordScores {
    pub id: String,
    pub r1: ScoreTriple<f64>,
    pub r2: ScoreTriple<f64>,
    pub rl: ScoreTriple<f64>,
    pub embed: ScoreTriple<f64>,
}

/// Macro-averaged scores of one system on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub system: String,
    pub dataset: String,
    pub r1: ScoreTriple<f64>,
    pub r2: ScoreTriple<f64>,
    pub rl: ScoreTriple<f64>,
    pub embed: ScoreTriple<f64>,
    pub n: usize,
}

impl EvalRow {
    pub fn from_records(system: &str, dataset: &str, rows: &[RecordScores]) -> Option<Self> {
        Some(Self {
            system: system.to_string(),
            dataset: dataset.to_string(),
            r1: ScoreTriple::mean(rows.iter().map(|r| &r.r1))?,
            r2: ScoreTriple::mean(rows.iter().map(|r| &r.r2))?,
            rl: ScoreTriple::mean(rows.iter().map(|r| &r.rl))?,
            embed: ScoreTriple::mean(rows.iter().map(|r| &r.embed))?,
            n: rows.len(),
        })
    }

    /// Pretty JSON with a trailing newline; the golden-file format.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("EvalRow serializes");
        s.push('\n');
        s
    }

    /// One table line in percent: `system dataset R-1 R-2 R-L B-S n` (F scores).
    pub fn to_table_line(&self) -> String {
        format!(
            "{:<28}{:<16}{:>8.2}{:>8.2}{:>8.2}{:>8.2}{:>8}",
            self.system,
            self.dataset,
            100.0 * self.r1.f1,
            100.0 * self.r2.f1,
            100.0 * self.rl.f1,
            100.0 * self.embed.f1,
            self.n
        )
    }

    pub fn table_header() -> String {
        format!(
            "{:<28}{:<16}{:>8}{:>8}{:>8}{:>8}{:>8}",
            "system", "dataset", "R-1", "R-2", "R-L", "B-S", "n"
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSummary {
    pub id: String,
    pub summary: String,
    pub selected_indices: Vec<usize>,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub row: EvalRow,
    pub per_record: Vec<RecordScores>,
    pub summaries: Vec<GeneratedSummary>,
}

/// Scores `generated` against `reference` with ROUGE-1/2/L and the
/// embedding score.
pub fn score_pair<P: Provider<f64> + ?Sized>(
    id: &str,
    reference: &str,
    generated: &str,
    provider: &P,
    include_punctuation: bool,
) -> Result<RecordScores, MetricsError> {
    let r = rouge_tokens(reference, include_punctuation);
    let g = rouge_tokens(generated, include_punctuation);
    Ok(RecordScores {
        id: id.to_string(),
        r1: rouge_n(&g, &r, 1),
        r2: rouge_n(&g, &r, 2),
        rl: rouge_l(&g, &r),
        embed: embed_score(&g, &r, provider)?,
    })
}

/// Mean compression ratio of `records` as a fraction.
pub fn default_ratio(records: &[Record]) -> Result<f64, CorpusError> {
    Ok(corpus_stats(records, &WordCounter)?.compression_ratio_pct.mean / 100.0)
}

/// Summarizes every record extractively and scores it against its
/// reference summary.
pub fn run_extractive_eval<P, C>(
    records: &[Record],
    provider: &P,
    counter: &C,
    config: &EvalConfig,
) -> Result<EvalOutput, HarnessError>
where
    P: Provider<f64> + ?Sized,
    C: TokenCounter + ?Sized,
{
    if records.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    let target = match config.target {
        Some(t) => t,
        None => SummaryTarget::Ratio(default_ratio(records)?),
    };
    let results: Vec<(GeneratedSummary, RecordScores)> = records
        .par_iter()
        .map(|rec| {
            let s = summarize_extractive(&rec.article, target, provider, counter, config.seed)
                .map_err(|source| HarnessError::Summarize {
                    id: rec.id.clone(),
                    source,
                })?;
            let scores = score_pair(&rec.id, &rec.summary, &s.text, provider, config.include_punctuation)
                .map_err(|source| HarnessError::Score {
                    id: rec.id.clone(),
                    source,
                })?;
            Ok((
                GeneratedSummary {
                    id: rec.id.clone(),
                    summary: s.text,
                    selected_indices: s.selected,
                    k: s.k_used,
                },
                scores,
            ))
        })
        .collect::<Result<_, HarnessError>>()?;
    let (summaries, per_record): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let row = EvalRow::from_records(&config.system, &config.dataset, &per_record)
        .expect("non-empty dataset");
    Ok(EvalOutput {
        row,
        per_record,
        summaries,
    })
}

/// A reference summary and a system output to score against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    #[serde(default)]
    pub id: Option<String>,
    pub reference: String,
    pub generated: String,
}

/// Scores externally generated summaries with the same metric battery as
/// [`run_extractive_eval`].
pub fn score_pairs<P: Provider<f64> + ?Sized>(
    pairs: &[ScorePair],
    provider: &P,
    config: &EvalConfig,
) -> Result<EvalOutput, HarnessError> {
    if pairs.is_empty() {
        return Err(HarnessError::EmptyDataset);
    }
    for (index, p) in pairs.iter().enumerate() {
        if p.reference.trim().is_empty() {
            return Err(HarnessError::EmptyPairMember {
                index,
                side: "reference",
            });
        }
        if p.generated.trim().is_empty() {
            return Err(HarnessError::EmptyPairMember {
                index,
                side: "generated",
            });
        }
    }
    let per_record: Vec<RecordScores> = pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let id = p.id.clone().unwrap_or_else(|| format!("{i:06}"));
            score_pair(&id, &p.reference, &p.generated, provider, config.include_punctuation)
                .map_err(|source| HarnessError::Score { id, source })
        })
        .collect::<Result<_, _>>()?;
    let row = EvalRow::from_records(&config.system, &config.dataset, &per_record)
        .expect("non-empty pairs");
    Ok(EvalOutput {
        row,
        per_record,
        summaries: Vec::new(),
    })
}
