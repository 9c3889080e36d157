//! Token and sentence embeddings behind one provider contract.
//!
//! Local providers ([`OneHotProvider`], [`StoreProvider`]) are bitwise
//! deterministic. [`RemoteProvider`] talks to an external encoder service and
//! caches every response in an [`EmbeddingStore`] so runs can be replayed
//! offline.

mod remote;
mod store;

use std::fmt;
use std::sync::Arc;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::text::{word_tokenize, SubwordVocab};

pub use remote::{remote_provider, EmbedRequest, EmbedResponse, RemoteProvider};
pub use store::{load_store, EmbeddingStore, StoreProvider, STORE_MAGIC};

#[derive(Debug, Error)]
pub enum EmbeddingError {
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in vector")]
    NonFinite,
    #[error("text has no tokens to embed")]
    EmptyInput,
    #[error("no embedding for key {key:?}")]
    MissingKey { key: String },
    #[error("embedding failed at index {index}: {source}")]
    AtIndex {
        index: usize,
        #[source]
        source: Box<EmbeddingError>,
    },
    #[error("provider {provider} does not support {mode} mode")]
    Unsupported { provider: String, mode: ProviderMode },
    #[error("remote request failed after {attempts} attempt(s): {message}")]
    Remote { attempts: usize, message: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("malformed embedding store: {0}")]
    Format(String),
    #[error("duplicate store key {0:?}")]
    DuplicateKey(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl EmbeddingError {
    pub(crate) fn at(index: usize, source: EmbeddingError) -> Self {
        match source {
            // keep the innermost index, it is the one the caller can act on
            e @ EmbeddingError::AtIndex { .. } => e,
            e => EmbeddingError::AtIndex {
                index,
                source: Box::new(e),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProviderMode {
    Token,
    Sentence,
    Both,
}

impl ProviderMode {
    pub fn supports_tokens(self) -> bool {
        matches!(self, ProviderMode::Token | ProviderMode::Both)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ProviderMode::Token => "token",
            ProviderMode::Sentence => "sentence",
            ProviderMode::Both => "both",
        }
    }
}

impl fmt::Display for ProviderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Source of token and sentence vectors.
///
/// Implementations must be deterministic for a fixed configuration and safe
/// to share across threads for concurrent read-only calls.
pub trait Provider<T: Scalar>: Send + Sync {
    fn name(&self) -> &str;

    /// Output dimension, when known before the first call.
    fn dimension(&self) -> Option<usize>;

    fn mode(&self) -> ProviderMode;

    /// One vector per token, in order.
    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<Vec<T>>, EmbeddingError>;

    /// One vector per sentence, in order. The default mean-pools the vectors
    /// of each sentence's word tokens.
    fn embed_sentences(&self, sentences: &[String]) -> Result<Vec<Vec<T>>, EmbeddingError> {
        sentences
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let tokens = word_tokenize(s);
                self.embed_tokens(&tokens)
                    .and_then(|v| mean_pool(&v))
                    .map_err(|e| EmbeddingError::at(i, e))
            })
            .collect()
    }
}

impl<T: Scalar, P: Provider<T> + ?Sized> Provider<T> for Arc<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn dimension(&self) -> Option<usize> {
        (**self).dimension()
    }
    fn mode(&self) -> ProviderMode {
        (**self).mode()
    }
    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<Vec<T>>, EmbeddingError> {
        (**self).embed_tokens(tokens)
    }
    fn embed_sentences(&self, sentences: &[String]) -> Result<Vec<Vec<T>>, EmbeddingError> {
        (**self).embed_sentences(sentences)
    }
}

/// Arithmetic mean of equally sized vectors.
pub fn mean_pool<T: Scalar>(vectors: &[Vec<T>]) -> Result<Vec<T>, EmbeddingError> {
    let first = vectors.first().ok_or(EmbeddingError::EmptyInput)?;
    if vectors.len() == 1 {
        return Ok(first.clone());
    }
    let mut acc = vec![T::zero(); first.len()];
    for v in vectors {
        if v.len() != acc.len() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: acc.len(),
                found: v.len(),
            });
        }
        for (a, &x) in acc.iter_mut().zip(v) {
            *a = *a + x;
        }
    }
    let n = T::from_usize_lossy(vectors.len());
    Ok(acc.into_iter().map(|a| a / n).collect())
}

pub fn dot<T: Scalar>(u: &[T], v: &[T]) -> T {
    u.iter().zip(v).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

pub fn norm<T: Scalar>(u: &[T]) -> T {
    dot(u, u).sqrt()
}

/// `u·v / (|u||v|)`, clamped to `[-1, 1]`. Equal vectors give exactly 1.
pub fn cosine_similarity<T: Scalar>(u: &[T], v: &[T]) -> Result<T, EmbeddingError> {
    if u.len() != v.len() {
        return Err(EmbeddingError::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    if u.iter().chain(v).any(|x| !x.is_finite()) {
        return Err(EmbeddingError::NonFinite);
    }
    let (nu, nv) = (norm(u), norm(v));
    if nu == T::zero() || nv == T::zero() {
        return Err(EmbeddingError::ZeroVector);
    }
    // rounding in the norms would otherwise leave self-similarity a few ulps short of 1
    if u == v {
        return Ok(T::one());
    }
    let c = dot(u, v) / (nu * nv);
    Ok(c.max(-T::one()).min(T::one()))
}

/// Embeds sentences through `provider`, checking that one vector of a
/// consistent dimension comes back per sentence.
pub fn embed_sentences<T: Scalar, P: Provider<T> + ?Sized>(
    provider: &P,
    sentences: &[String],
) -> Result<Vec<Vec<T>>, EmbeddingError> {
    if sentences.is_empty() {
        return Ok(Vec::new());
    }
    let vectors = provider.embed_sentences(sentences)?;
    if vectors.len() != sentences.len() {
        return Err(EmbeddingError::Protocol(format!(
            "{} returned {} vectors for {} sentences",
            provider.name(),
            vectors.len(),
            sentences.len()
        )));
    }
    let dim = provider.dimension().unwrap_or(vectors[0].len());
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(EmbeddingError::at(
                i,
                EmbeddingError::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                },
            ));
        }
    }
    Ok(vectors)
}

/// Cache key for a text embedded in a given mode.
pub fn content_key(mode: ProviderMode, text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    format!("{}:{}", mode.as_str(), hex::encode(digest))
}

/// Deterministic basis-vector provider over a subword vocabulary.
///
/// A word maps to the mean of the basis vectors of its subword pieces, so a
/// single-piece word is exactly `e_id`.
#[derive(Debug, Clone)]
pub struct OneHotProvider {
    vocab: Arc<SubwordVocab>,
}

impl OneHotProvider {
    pub fn new(vocab: Arc<SubwordVocab>) -> Self {
        Self { vocab }
    }

    pub fn basis<T: Scalar>(&self, id: u32) -> Vec<T> {
        let mut v = vec![T::zero(); self.vocab.len()];
        v[id as usize] = T::one();
        v
    }
}

/// Builds the basis-vector provider for `vocab`.
pub fn onehot_provider(vocab: Arc<SubwordVocab>) -> OneHotProvider {
    OneHotProvider::new(vocab)
}

impl<T: Scalar> Provider<T> for OneHotProvider {
    fn name(&self) -> &str {
        "onehot"
    }

    fn dimension(&self) -> Option<usize> {
        Some(self.vocab.len())
    }

    fn mode(&self) -> ProviderMode {
        ProviderMode::Both
    }

    fn embed_tokens(&self, tokens: &[String]) -> Result<Vec<Vec<T>>, EmbeddingError> {
        tokens
            .iter()
            .enumerate()
            .map(|(i, tok)| {
                let ids = self.vocab.tokenize(tok);
                let basis: Vec<Vec<T>> = ids.iter().map(|&id| self.basis(id)).collect();
                mean_pool(&basis).map_err(|e| EmbeddingError::at(i, e))
            })
            .collect()
    }
}
