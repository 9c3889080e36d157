//! Clustering-based extractive summarization.
//!
//! Sentences are embedded, grouped with k-means (k-means++ seeding, Lloyd
//! iterations on unit-normalized vectors) and the sentence with the highest
//! cosine similarity to each centroid is kept. Selections are emitted in
//! article order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine_similarity, embed_sentences, norm, EmbeddingError, Provider};
use crate::scalar::Scalar;
use crate::text::{sentence_split, TokenCounter};

pub const MAX_ITERATIONS: usize = 100;
pub const SHIFT_TOLERANCE: f64 = 1e-4;
/// Seeded k-means++ starts per call; the lowest final inertia wins.
pub const RESTARTS: usize = 10;
const SNAP_GRID: f64 = (1u64 << 40) as f64;

#[derive(Debug, Error)]
pub enum ExtractiveError {
    #[error("k = {k} is out of range for {n} vectors")]
    KOutOfRange { k: usize, n: usize },
    #[error("vector {index} is zero")]
    ZeroVector { index: usize },
    #[error("vector {index} has dimension {found}, expected {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("article has no sentences")]
    NoSentences,
    #[error("article has no tokens")]
    NoTokens,
    #[error("invalid summary target: {0}")]
    BadTarget(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult<T> {
    /// Cluster id of every input vector.
    pub assignments: Vec<usize>,
    /// Centroids in the unit-normalized space.
    pub centroids: Vec<Vec<T>>,
    pub iterations: usize,
    pub converged: bool,
    /// Within-cluster sum of squared distances after every centroid update.
    pub inertia_trace: Vec<T>,
}

impl<T: Scalar> ClusterResult<T> {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }
}

/// `round_half_up(n × target / article)` clamped to `[1, n]`.
pub fn num_clusters(article_tokens: usize, target_summary_tokens: usize, n_sentences: usize) -> usize {
    if n_sentences == 0 {
        return 0;
    }
    let article = article_tokens.max(1) as u128;
    let num = 2 * n_sentences as u128 * target_summary_tokens as u128 + article;
    let k = (num / (2 * article)) as usize;
    k.clamp(1, n_sentences)
}

/// `round_half_up(n × ratio)` clamped to `[1, n]`.
pub fn num_clusters_for_ratio(ratio: f64, n_sentences: usize) -> usize {
    if n_sentences == 0 {
        return 0;
    }
    let k = (n_sentences as f64 * ratio.max(0.0) + 0.5).floor();
    if k >= n_sentences as f64 {
        n_sentences
    } else {
        (k as usize).max(1)
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

fn nearest<T: Scalar>(v: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, sq_dist(v, &centroids[0]));
    for (c, centroid) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(v, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn inertia<T: Scalar>(points: &[Vec<T>], assignments: &[usize], centroids: &[Vec<T>]) -> T {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &c)| sq_dist(p, &centroids[c]))
        .sum()
}

fn means<T: Scalar>(points: &[Vec<T>], assignments: &[usize], k: usize) -> Vec<Vec<T>> {
    let dim = points[0].len();
    let mut sums = vec![vec![T::zero(); dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &c) in points.iter().zip(assignments) {
        counts[c] += 1;
        for (s, &x) in sums[c].iter_mut().zip(p) {
            *s = *s + x;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        let n = T::from_usize_lossy(n.max(1));
        s.iter_mut().for_each(|x| *x = *x / n);
    }
    sums
}

/// Greedy k-means++: each step draws `2 + ln k` D²-weighted candidates and
/// keeps the one that lowers the total squared distance most.
fn kmeans_pp<T: Scalar>(points: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<T>> {
    let trials = 2 + (k as f64).ln() as usize;
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| sq_dist(p, &centroids[0]).to_f64_lossy())
        .collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        if total <= 0.0 {
            // every point coincides with a centroid already
            centroids.push(points[rng.gen_range(0..points.len())].clone());
            continue;
        }
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let pick = sample_weighted(&dist, total, rng);
            let next: Vec<f64> = dist
                .iter()
                .zip(points)
                .map(|(&d, p)| d.min(sq_dist(p, &points[pick]).to_f64_lossy()))
                .collect();
            let potential: f64 = next.iter().sum();
            if best.as_ref().is_none_or(|(b, _, _)| potential < *b) {
                best = Some((potential, pick, next));
            }
        }
        let (_, pick, next) = best.expect("at least one trial");
        centroids.push(points[pick].clone());
        dist = next;
    }
    centroids
}

fn sample_weighted(weights: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let mut r = rng.gen::<f64>() * total;
    let mut chosen = None;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            chosen = Some(i);
            if r < w {
                break;
            }
            r -= w;
        }
    }
    chosen.expect("positive total has a positive entry")
}

/// Gives every empty cluster the point farthest from its own centroid,
/// taken from clusters that have more than one member.
fn repair_empty<T: Scalar>(points: &[Vec<T>], assignments: &mut [usize], centroids: &mut [Vec<T>]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        assignments.iter().for_each(|&c| counts[c] += 1);
        let Some(empty) = counts.iter().position(|&n| n == 0) else {
            return;
        };
        let donor = (0..points.len())
            .filter(|&i| counts[assignments[i]] > 1)
            .map(|i| (i, sq_dist(&points[i], &centroids[assignments[i]])))
            .fold(None::<(usize, T)>, |best, (i, d)| match best {
                Some((_, bd)) if bd >= d => best,
                _ => Some((i, d)),
            })
            .map(|(i, _)| i)
            .expect("k <= n leaves a cluster with a spare point");
        assignments[donor] = empty;
        centroids[empty] = points[donor].clone();
    }
}

fn assign<T: Scalar>(points: &[Vec<T>], centroids: &mut [Vec<T>]) -> Vec<usize> {
    let mut a: Vec<usize> = points.iter().map(|p| nearest(p, centroids).0).collect();
    repair_empty(points, &mut a, centroids);
    a
}

/// Scales every vector to unit length, with coordinates snapped to a
/// 2^-40 grid so vectors that differ only in scale come out bitwise equal.
pub fn normalize_all<T: Scalar>(vectors: &[Vec<T>]) -> Result<Vec<Vec<T>>, ExtractiveError> {
    let dim = vectors.first().map_or(0, Vec::len);
    vectors
        .iter()
        .enumerate()
        .map(|(index, v)| {
            if v.len() != dim {
                return Err(ExtractiveError::Dimension {
                    index,
                    expected: dim,
                    found: v.len(),
                });
            }
            let n = norm(v);
            if n == T::zero() || !n.is_finite() {
                return Err(ExtractiveError::ZeroVector { index });
            }
            let grid = T::from_f64_lossy(SNAP_GRID);
            Ok(v.iter().map(|&x| (x / n * grid).round() / grid).collect())
        })
        .collect()
}

/// Seeded k-means over unit-normalized copies of `vectors`.
///
/// Stops at an assignment fixpoint, when no centroid moves by
/// [`SHIFT_TOLERANCE`] or more, or after [`MAX_ITERATIONS`]. On convergence
/// every centroid is the mean of its members.
pub fn kmeans<T: Scalar>(
    vectors: &[Vec<T>],
    k: usize,
    seed: u64,
) -> Result<ClusterResult<T>, ExtractiveError> {
    if k == 0 || k > vectors.len() {
        return Err(ExtractiveError::KOutOfRange { k, n: vectors.len() });
    }
    kmeans_euclidean(&normalize_all(vectors)?, k, seed)
}

/// [`kmeans`] on the points as given, without normalization.
pub fn kmeans_euclidean<T: Scalar>(
    points: &[Vec<T>],
    k: usize,
    seed: u64,
) -> Result<ClusterResult<T>, ExtractiveError> {
    if k == 0 || k > points.len() {
        return Err(ExtractiveError::KOutOfRange { k, n: points.len() });
    }
    let dim = points[0].len();
    if let Some((index, bad)) = points.iter().enumerate().find(|(_, p)| p.len() != dim) {
        return Err(ExtractiveError::Dimension {
            index,
            expected: dim,
            found: bad.len(),
        });
    }
    if points.iter().flatten().any(|x| !x.is_finite()) {
        return Err(EmbeddingError::NonFinite.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // a later run must win by more than rounding noise, so rescaled
    // inputs pick the same run
    let margin = T::one() - T::from_f64_lossy(1e-9);
    let mut best: Option<(T, ClusterResult<T>)> = None;
    for _ in 0..RESTARTS {
        let run = lloyd(points, k, &mut rng);
        let last = *run.inertia_trace.last().unwrap_or(&T::zero());
        if best.as_ref().is_none_or(|(b, _)| last < *b * margin) {
            best = Some((last, run));
        }
    }
    Ok(best.expect("RESTARTS > 0").1)
}

fn lloyd<T: Scalar>(points: &[Vec<T>], k: usize, rng: &mut ChaCha8Rng) -> ClusterResult<T> {
    let mut centroids = kmeans_pp(points, k, rng);
    let mut assignments = assign(points, &mut centroids);
    let tol = T::from_f64_lossy(SHIFT_TOLERANCE);

    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let updated = means(points, &assignments, k);
        let shift = centroids
            .iter()
            .zip(&updated)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(T::zero(), T::max);
        centroids = updated;
        trace.push(inertia(points, &assignments, &centroids));

        let next = assign(points, &mut centroids);
        if next == assignments {
            // repair may have moved a centroid onto a point
            centroids = means(points, &assignments, k);
            converged = true;
            break;
        }
        assignments = next;
        if shift < tol {
            centroids = means(points, &assignments, k);
            trace.push(inertia(points, &assignments, &centroids));
            converged = true;
            break;
        }
    }
    ClusterResult {
        assignments,
        centroids,
        iterations,
        converged,
        inertia_trace: trace,
    }
}

/// How long the summary should be.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SummaryTarget {
    /// Fraction of the article's tokens, e.g. `0.2`.
    Ratio(f64),
    /// Absolute token count.
    Tokens(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractiveSummary {
    /// Sentence indices, strictly ascending.
    pub selected: Vec<usize>,
    pub text: String,
    pub k_used: usize,
}

/// Picks, per cluster, the member most cosine-similar to the centroid
/// (ties: lower index). Returns indices ascending.
pub fn select_representatives<T: Scalar>(
    embeddings: &[Vec<T>],
    clusters: &ClusterResult<T>,
) -> Result<Vec<usize>, ExtractiveError> {
    let mut selected = Vec::with_capacity(clusters.k());
    for (c, centroid) in clusters.centroids.iter().enumerate() {
        let mut best: Option<(usize, T)> = None;
        for i in clusters.members(c) {
            let sim = cosine_similarity(centroid, &embeddings[i])?;
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((i, sim));
            }
        }
        if let Some((i, _)) = best {
            selected.push(i);
        }
    }
    selected.sort_unstable();
    Ok(selected)
}

/// Summarizes `article` by clustering its sentences.
///
/// `counter` measures article length for the k formula.
pub fn summarize_extractive<T: Scalar, P: Provider<T> + ?Sized, C: TokenCounter + ?Sized>(
    article: &str,
    target: SummaryTarget,
    provider: &P,
    counter: &C,
    seed: u64,
) -> Result<ExtractiveSummary, ExtractiveError> {
    let sentences = sentence_split(article);
    if sentences.is_empty() {
        return Err(ExtractiveError::NoSentences);
    }
    let n = sentences.len();
    let k = match target {
        SummaryTarget::Ratio(r) if !r.is_finite() || r <= 0.0 => {
            return Err(ExtractiveError::BadTarget(format!("ratio {r}")))
        }
        SummaryTarget::Ratio(r) => num_clusters_for_ratio(r, n),
        SummaryTarget::Tokens(0) => return Err(ExtractiveError::BadTarget("0 tokens".into())),
        SummaryTarget::Tokens(t) => {
            let article_tokens = counter.count_tokens(article);
            if article_tokens == 0 {
                return Err(ExtractiveError::NoTokens);
            }
            num_clusters(article_tokens, t, n)
        }
    };
    let embeddings: Vec<Vec<T>> = embed_sentences(provider, &sentences)?;
    let selected = if k == n {
        (0..n).collect()
    } else {
        let unit = normalize_all(&embeddings)?;
        let clusters = kmeans_euclidean(&unit, k, seed)?;
        select_representatives(&unit, &clusters)?
    };
    let text = selected
        .iter()
        .map(|&i| sentences[i].as_str())
        .collect::<Vec<_>>()
        .join(" ");
    Ok(ExtractiveSummary {
        k_used: selected.len(),
        selected,
        text,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::onehot_provider;
    use crate::text::{SubwordVocab, WordCounter};
    use proptest::prelude::*;
    use std::sync::Arc;

    #[test]
    fn k_formula() {
        assert_eq!(num_clusters(100, 20, 10), 2);
        assert_eq!(num_clusters(100, 250, 10), 10);
        assert_eq!(num_clusters(100, 1, 3), 1);
        // 10 * 25 / 100 = 2.5 rounds up
        assert_eq!(num_clusters(100, 25, 10), 3);
        assert_eq!(num_clusters(100, 24, 10), 2);
        assert_eq!(num_clusters_for_ratio(0.25, 10), 3);
        assert_eq!(num_clusters_for_ratio(0.01, 3), 1);
        assert_eq!(num_clusters_for_ratio(1.0, 7), 7);
        assert_eq!(num_clusters_for_ratio(5.0, 7), 7);
    }

    #[test]
    fn k_one_is_mean() {
        let v: Vec<Vec<f64>> = vec![vec![3.0, 4.0], vec![0.0, 2.0], vec![1.0, 0.0]];
        let r = kmeans(&v, 1, 1).unwrap();
        assert!(r.converged);
        assert_eq!(r.assignments, vec![0, 0, 0]);
        let expect = [(0.6 + 0.0 + 1.0) / 3.0, (0.8 + 1.0 + 0.0) / 3.0];
        assert!((r.centroids[0][0] - expect[0]).abs() < 1e-12);
        assert!((r.centroids[0][1] - expect[1]).abs() < 1e-12);
    }

    /// Sum over clusters of squared distances to the cluster mean, for a
    /// given partition of unit vectors.
    fn partition_cost(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
        let m = means(points, labels, k);
        inertia(points, labels, &m)
    }

    #[test]
    fn two_pairs_match_brute_force() {
        let v = vec![
            vec![1.0, 0.05],
            vec![1.0, -0.05],
            vec![0.05, 1.0],
            vec![-0.05, 1.0],
        ];
        let unit = normalize_all(&v).unwrap();
        // enumerate all 2-partitions (label of point 0 fixed to 0)
        let best = (0u32..8)
            .map(|mask| {
                let labels: Vec<usize> =
                    std::iter::once(0).chain((0..3).map(|b| ((mask >> b) & 1) as usize)).collect();
                labels
            })
            .filter(|l| l.contains(&1))
            .min_by(|a, b| partition_cost(&unit, a, 2).total_cmp(&partition_cost(&unit, b, 2)))
            .unwrap();
        assert_eq!(best, vec![0, 0, 1, 1]);
        for seed in 0..20 {
            let r = kmeans(&v, 2, seed).unwrap();
            assert_eq!(r.assignments[0], r.assignments[1]);
            assert_eq!(r.assignments[2], r.assignments[3]);
            assert_ne!(r.assignments[0], r.assignments[2]);
        }
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0], vec![-1.0, 0.2]];
        let r = kmeans(&v, 4, 3).unwrap();
        let mut a = r.assignments.clone();
        a.sort_unstable();
        assert_eq!(a, vec![0, 1, 2, 3]);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let v = vec![vec![1.0, 0.0]; 5];
        let r = kmeans(&v, 3, 9).unwrap();
        for c in 0..3 {
            assert!(r.members(c).count() >= 1);
        }
    }

    #[test]
    fn kmeans_errors() {
        let v = vec![vec![1.0, 0.0], vec![0.0, 0.0]];
        assert!(matches!(kmeans(&v, 0, 1), Err(ExtractiveError::KOutOfRange { .. })));
        assert!(matches!(kmeans(&v, 3, 1), Err(ExtractiveError::KOutOfRange { .. })));
        assert!(matches!(kmeans(&v, 1, 1), Err(ExtractiveError::ZeroVector { index: 1 })));
    }

    fn topic_vocab() -> Arc<SubwordVocab> {
        Arc::new(SubwordVocab::parse("#unk=0\n<unk>\nسیاست\nحکومت\nکرکٹ\nمیچ\n").unwrap())
    }

    #[test]
    fn two_topics_one_sentence_each() {
        let vocab = topic_vocab();
        let p = onehot_provider(vocab.clone());
        let article = "سیاست حکومت۔ کرکٹ میچ۔ حکومت سیاست سیاست۔ میچ کرکٹ کرکٹ۔";
        for seed in 0..10 {
            let s = summarize_extractive::<f64, _, _>(
                article,
                SummaryTarget::Ratio(0.5),
                &p,
                vocab.as_ref(),
                seed,
            )
            .unwrap();
            assert_eq!(s.k_used, 2);
            assert_eq!(s.selected.len(), 2);
            assert!(s.selected[0] < s.selected[1]);
            let politics = [0, 2].contains(&s.selected[0]) as u8 + [0, 2].contains(&s.selected[1]) as u8;
            assert_eq!(politics, 1, "seed {seed}: {:?}", s.selected);
        }
    }

    #[test]
    fn degenerate_articles() {
        let vocab = topic_vocab();
        let p = onehot_provider(vocab.clone());
        let s = summarize_extractive::<f64, _, _>("سیاست۔", SummaryTarget::Ratio(0.1), &p, &WordCounter, 1)
            .unwrap();
        assert_eq!((s.selected, s.k_used, s.text.as_str()), (vec![0], 1, "سیاست۔"));

        let article = "سیاست۔ میچ۔ کرکٹ۔";
        let s = summarize_extractive::<f64, _, _>(article, SummaryTarget::Ratio(1.0), &p, &WordCounter, 1)
            .unwrap();
        assert_eq!(s.selected, vec![0, 1, 2]);
        assert_eq!(s.text, article);

        assert!(matches!(
            summarize_extractive::<f64, _, _>("  ", SummaryTarget::Ratio(0.5), &p, &WordCounter, 1),
            Err(ExtractiveError::NoSentences)
        ));
        assert!(matches!(
            summarize_extractive::<f64, _, _>(article, SummaryTarget::Ratio(0.0), &p, &WordCounter, 1),
            Err(ExtractiveError::BadTarget(_))
        ));
    }

    #[test]
    fn token_target_uses_counter() {
        let vocab = topic_vocab();
        let p = onehot_provider(vocab.clone());
        // 4 sentences, 9 word tokens (incl. 4 full stops); target 5 → round(4*5/9) = 2
        let article = "سیاست۔ کرکٹ۔ حکومت۔ میچ میچ۔";
        let s = summarize_extractive::<f64, _, _>(article, SummaryTarget::Tokens(5), &p, &WordCounter, 2)
            .unwrap();
        assert_eq!(s.k_used, 2);
    }

    proptest! {
        #[test]
        fn inertia_never_increases(points in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 3..25), k in 1usize..4, seed in 0u64..1000) {
            prop_assume!(points.iter().all(|p| norm(p) > 1e-3));
            prop_assume!(k <= points.len());
            let r = kmeans(&points, k, seed).unwrap();
            for w in r.inertia_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", r.inertia_trace);
            }
            prop_assert!(r.assignments.iter().all(|&c| c < k));
            if r.converged {
                let unit = normalize_all(&points).unwrap();
                let m = means(&unit, &r.assignments, k);
                for (a, b) in m.iter().zip(&r.centroids) {
                    prop_assert!(sq_dist(a, b).sqrt() < 1e-6);
                }
            }
        }

        #[test]
        fn k_always_in_range(a in 1usize..10_000, t in 0usize..10_000, n in 1usize..200) {
            let k = num_clusters(a, t, n);
            prop_assert!((1..=n).contains(&k));
        }
    }
}
