//! Summarization toolkit for low-resource news corpora (Urdu first):
//! corpus preparation, recall-based truncation, clustering extractive
//! summaries, vocabulary pruning and evaluation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the command-line tool.

pub mod corpus;
pub mod embedding;
pub mod extractive;
pub mod harness;
pub mod metrics;
pub mod scalar;
pub mod text;
pub mod truncation;
pub mod vocab_adapt;

pub use corpus::{clean_text, compression_ratio, filter_corpus, CorpusError, Record, Source};
pub use embedding::{cosine_similarity, EmbeddingError, Provider, ProviderMode};
pub use extractive::{kmeans, summarize_extractive, ClusterResult, ExtractiveError, SummaryTarget};
pub use harness::{EvalRow, HarnessError};
pub use metrics::{embed_score, rouge_l, rouge_n, ScoreTriple};
pub use scalar::Scalar;
pub use text::{SubwordVocab, TokenCounter, WordCounter};
pub use truncation::{truncate_article, TruncatedArticle};
pub use vocab_adapt::{size_report, SizeReport};

/// Scores at double precision.
pub type Score = ScoreTriple<f64>;
/// Clustering result at double precision.
pub type Clusters = ClusterResult<f64>;
/// On-disk embedding stores hold `f32`.
pub type Store = embedding::EmbeddingStore<f32>;
pub type Store64 = embedding::EmbeddingStore<f64>;
