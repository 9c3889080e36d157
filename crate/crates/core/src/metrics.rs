//! ROUGE-N, ROUGE-L and the greedy-matching embedding score.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, EmbeddingError, Provider};
use crate::scalar::{ratio, Scalar};
use crate::text::{is_punctuation_token, word_tokenize};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("{side} side is empty")]
    EmptySide { side: &'static str },
    #[error("provider {0} cannot embed tokens")]
    NoTokenMode(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// Precision, recall and their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct ScoreTriple<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

impl<T: Scalar> ScoreTriple<T> {
    pub fn zero() -> Self {
        Self {
            precision: T::zero(),
            recall: T::zero(),
            f1: T::zero(),
        }
    }

    /// F is `2PR/(P+R)`, or zero when `P + R = 0`.
    pub fn from_pr(precision: T, recall: T) -> Self {
        let sum = precision + recall;
        let f1 = if sum == T::zero() {
            T::zero()
        } else {
            (precision + precision) * recall / sum
        };
        Self {
            precision,
            recall,
            f1,
        }
    }

    /// Component-wise mean; `None` for an empty input.
    pub fn mean<'a>(triples: impl IntoIterator<Item = &'a Self>) -> Option<Self>
    where
        T: 'a,
    {
        let triples: Vec<&Self> = triples.into_iter().collect();
        Some(Self {
            precision: crate::scalar::mean(triples.iter().map(|t| t.precision))?,
            recall: crate::scalar::mean(triples.iter().map(|t| t.recall))?,
            f1: crate::scalar::mean(triples.iter().map(|t| t.f1))?,
        })
    }
}

/// Word tokens for ROUGE: punctuation tokens dropped unless
/// `include_punctuation`.
pub fn rouge_tokens(text: &str, include_punctuation: bool) -> Vec<String> {
    word_tokenize(text)
        .into_iter()
        .filter(|t| include_punctuation || !is_punctuation_token(t))
        .collect()
}

fn ngram_counts<S: Hash + Eq>(tokens: &[S], n: usize) -> (HashMap<&[S], usize>, usize) {
    let mut counts = HashMap::new();
    if tokens.len() < n {
        return (counts, 0);
    }
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    (counts, tokens.len() + 1 - n)
}

/// Clipped n-gram overlap between candidate and reference.
///
/// Panics if `n == 0`.
pub fn rouge_n<T: Scalar, S: Hash + Eq>(
    candidate: &[S],
    reference: &[S],
    n: usize,
) -> ScoreTriple<T> {
    assert!(n >= 1, "ROUGE-N needs n >= 1");
    let (cand, cand_total) = ngram_counts(candidate, n);
    let (refs, ref_total) = ngram_counts(reference, n);
    if cand_total == 0 || ref_total == 0 {
        return ScoreTriple::zero();
    }
    let overlap: usize = cand
        .iter()
        .map(|(g, &c)| c.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    ScoreTriple::from_pr(ratio(overlap, cand_total), ratio(overlap, ref_total))
}

/// Length of the longest common subsequence.
pub fn lcs_len<S: Eq>(a: &[S], b: &[S]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based ROUGE-L with a plain harmonic-mean F (β = 1).
pub fn rouge_l<T: Scalar, S: Eq>(candidate: &[S], reference: &[S]) -> ScoreTriple<T> {
    if candidate.is_empty() || reference.is_empty() {
        return ScoreTriple::zero();
    }
    let l = lcs_len(candidate, reference);
    ScoreTriple::from_pr(ratio(l, candidate.len()), ratio(l, reference.len()))
}

/// Greedy cosine matching between token embeddings, without idf weights.
///
/// Precision averages, over candidate tokens, the best similarity to any
/// reference token; recall is the mirror image. Best similarities are
/// floored at zero so the triple stays in `[0, 1]`.
pub fn embed_score<T: Scalar, P: Provider<T> + ?Sized>(
    candidate: &[String],
    reference: &[String],
    provider: &P,
) -> Result<ScoreTriple<T>, MetricsError> {
    if candidate.is_empty() {
        return Err(MetricsError::EmptySide { side: "candidate" });
    }
    if reference.is_empty() {
        return Err(MetricsError::EmptySide { side: "reference" });
    }
    if !provider.mode().supports_tokens() {
        return Err(MetricsError::NoTokenMode(provider.name().to_string()));
    }
    let cand = provider.embed_tokens(candidate)?;
    let refs = provider.embed_tokens(reference)?;
    let mut sim = vec![vec![T::zero(); refs.len()]; cand.len()];
    for (i, c) in cand.iter().enumerate() {
        for (j, r) in refs.iter().enumerate() {
            sim[i][j] = cosine_similarity(c, r)?;
        }
    }
    let floor = |x: T| x.max(T::zero());
    let precision = sim
        .iter()
        .map(|row| floor(row.iter().copied().fold(T::neg_infinity(), T::max)))
        .sum::<T>()
        / T::from_usize_lossy(cand.len());
    let recall = (0..refs.len())
        .map(|j| floor(sim.iter().map(|row| row[j]).fold(T::neg_infinity(), T::max)))
        .sum::<T>()
        / T::from_usize_lossy(refs.len());
    Ok(ScoreTriple::from_pr(precision, recall))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::onehot_provider;
    use crate::text::SubwordVocab;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    fn strings(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn rouge_n_examples() {
        let t: ScoreTriple<f64> = rouge_n(&toks("a b c"), &toks("a b c"), 1);
        assert_eq!(t, ScoreTriple { precision: 1.0, recall: 1.0, f1: 1.0 });
        let t: ScoreTriple<f64> = rouge_n(&toks("a b c"), &toks("a b d"), 1);
        assert_eq!((t.precision, t.recall, t.f1), (2.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0));
        let t: ScoreTriple<f64> = rouge_n(&toks("a b"), &toks("c d"), 2);
        assert_eq!(t, ScoreTriple::zero());
        // clipping: candidate repeats cannot inflate overlap
        let t: ScoreTriple<f64> = rouge_n(&toks("a a a a"), &toks("a b"), 1);
        assert_eq!((t.precision, t.recall), (0.25, 0.5));
    }

    #[test]
    fn rouge_empty_sides() {
        let e: Vec<&str> = vec![];
        assert_eq!(rouge_n::<f64, _>(&e, &toks("a"), 1), ScoreTriple::zero());
        assert_eq!(rouge_n::<f64, _>(&toks("a"), &e, 1), ScoreTriple::zero());
        assert_eq!(rouge_n::<f64, _>(&toks("a"), &toks("a"), 2), ScoreTriple::zero());
        assert_eq!(rouge_l::<f64, _>(&e, &toks("a")), ScoreTriple::zero());
    }

    #[test]
    #[should_panic]
    fn rouge_zero_n_panics() {
        let _: ScoreTriple<f64> = rouge_n(&toks("a"), &toks("a"), 0);
    }

    #[test]
    fn rouge_l_examples() {
        let t: ScoreTriple<f64> = rouge_l(&toks("a b c d"), &toks("a c b d"));
        assert_eq!((t.precision, t.recall, t.f1), (0.75, 0.75, 0.75));
        let t: ScoreTriple<f32> = rouge_l(&toks("x y"), &toks("x y"));
        assert_eq!(t.f1, 1.0);
    }

    #[test]
    fn rouge_tokens_drop_punctuation() {
        assert_eq!(rouge_tokens("آج، دن ہے۔", false), vec!["آج", "دن", "ہے"]);
        assert_eq!(rouge_tokens("آج، دن", true), vec!["آج", "،", "دن"]);
    }

    fn provider() -> crate::embedding::OneHotProvider {
        onehot_provider(Arc::new(
            SubwordVocab::parse("#unk=0\n<unk>\na\nb\nc\nd\n").unwrap(),
        ))
    }

    #[test]
    fn embed_score_examples() {
        let p = provider();
        let t: ScoreTriple<f64> = embed_score(&strings("a b"), &strings("a c"), &p).unwrap();
        assert_eq!((t.precision, t.recall, t.f1), (0.5, 0.5, 0.5));
        let t: ScoreTriple<f64> = embed_score(&strings("a b c"), &strings("a b c"), &p).unwrap();
        assert_eq!(t.f1, 1.0);
        let t: ScoreTriple<f64> = embed_score(&strings("a b"), &strings("c d"), &p).unwrap();
        assert_eq!(t, ScoreTriple::zero());
        assert!(matches!(
            embed_score::<f64, _>(&[], &strings("a"), &p),
            Err(MetricsError::EmptySide { side: "candidate" })
        ));
        assert!(matches!(
            embed_score::<f64, _>(&strings("a"), &[], &p),
            Err(MetricsError::EmptySide { side: "reference" })
        ));
    }

    /// Independent LCS: longest subsequence of `a` that is also a
    /// subsequence of `b`, by enumerating subsets of `a`.
    fn brute_lcs(a: &[u8], b: &[u8]) -> usize {
        fn is_subseq(s: &[u8], b: &[u8]) -> bool {
            let mut it = b.iter();
            s.iter().all(|x| it.any(|y| y == x))
        }
        (0u32..1 << a.len())
            .filter_map(|mask| {
                let s: Vec<u8> = (0..a.len())
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| a[i])
                    .collect();
                is_subseq(&s, b).then_some(s.len())
            })
            .max()
            .unwrap_or(0)
    }

    fn seq() -> impl Strategy<Value = Vec<u8>> {
        prop::collection::vec(0u8..4, 0..=10)
    }

    proptest! {
        #[test]
        fn lcs_matches_brute_force(a in seq(), b in seq()) {
            prop_assert_eq!(lcs_len(&a, &b), brute_lcs(&a, &b));
        }

        #[test]
        fn swap_duality(c in seq(), r in seq(), n in 1usize..4) {
            let cr: ScoreTriple<f64> = rouge_n(&c, &r, n);
            let rc: ScoreTriple<f64> = rouge_n(&r, &c, n);
            prop_assert_eq!(cr.precision, rc.recall);
            prop_assert_eq!(cr.recall, rc.precision);
        }

        #[test]
        fn bounds(c in seq(), r in seq(), n in 1usize..3) {
            for t in [rouge_n::<f64, _>(&c, &r, n), rouge_l::<f64, _>(&c, &r)] {
                for x in [t.precision, t.recall, t.f1] {
                    prop_assert!((0.0..=1.0).contains(&x));
                }
                prop_assert!(t.f1 >= t.precision.min(t.recall) - 1e-12);
                prop_assert!(t.f1 <= t.precision.max(t.recall) + 1e-12);
            }
        }

        #[test]
        fn appending_reference_token_keeps_recall(c in seq(), r in prop::collection::vec(0u8..4, 1..10), pick in 0usize..10) {
            let before: ScoreTriple<f64> = rouge_n(&c, &r, 1);
            let mut longer = c.clone();
            longer.push(r[pick % r.len()]);
            let after: ScoreTriple<f64> = rouge_n(&longer, &r, 1);
            prop_assert!(after.recall >= before.recall);
        }
    }
}
