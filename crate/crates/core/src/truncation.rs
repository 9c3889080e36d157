//! Budget-fitting of articles by dropping the paragraphs that recall the
//! least of the reference summary.
//!
//! Paragraphs are scored once by ROUGE-1 recall against the summary, then
//! removed lowest score first (ties: the later paragraph goes first) until
//! the article fits the token budget. A lone survivor that still does not
//! fit is cut to exactly `budget` tokens.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{rouge_n, rouge_tokens, ScoreTriple};
use crate::text::{paragraph_split, TokenCounter};

/// Default token budget of BERT-style encoders.
pub const DEFAULT_BUDGET: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum TruncationError {
    #[error("article has no paragraphs")]
    EmptyArticle,
    #[error("summary has no scoreable tokens")]
    EmptySummary,
    #[error("budget must be at least 1")]
    ZeroBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Paragraph {
    /// 0-based position in the original article.
    pub index: usize,
    pub text: String,
    pub score: f64,
    pub token_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedArticle {
    /// Retained paragraphs in original order.
    pub paragraphs: Vec<Paragraph>,
    pub total_tokens: usize,
    pub tokens_before: usize,
    /// Original indices in removal order.
    pub removed: Vec<usize>,
    pub hard_cut: bool,
}

impl TruncatedArticle {
    /// Retained paragraphs joined by blank lines.
    pub fn text(&self) -> String {
        self.paragraphs
            .iter()
            .map(|p| p.text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn is_unchanged(&self) -> bool {
        self.removed.is_empty() && !self.hard_cut
    }
}

/// ROUGE-1 recall of each paragraph against `summary`.
pub fn score_paragraphs(paragraphs: &[String], summary: &str) -> Result<Vec<f64>, TruncationError> {
    let reference = rouge_tokens(summary, false);
    if reference.is_empty() {
        return Err(TruncationError::EmptySummary);
    }
    Ok(paragraphs
        .iter()
        .map(|p| {
            let t: ScoreTriple<f64> = rouge_n(&rouge_tokens(p, false), &reference, 1);
            t.recall
        })
        .collect())
}

/// Order in which paragraphs are removed: ascending score, later index
/// first among equal scores.
pub fn removal_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)));
    order
}

/// Fits `article` into `budget` tokens as counted by `counter`.
pub fn truncate_article<C: TokenCounter + ?Sized>(
    article: &str,
    summary: &str,
    budget: usize,
    counter: &C,
) -> Result<TruncatedArticle, TruncationError> {
    if budget == 0 {
        return Err(TruncationError::ZeroBudget);
    }
    let texts = paragraph_split(article);
    if texts.is_empty() {
        return Err(TruncationError::EmptyArticle);
    }
    let lengths: Vec<usize> = texts.iter().map(|p| counter.count_tokens(p)).collect();
    let tokens_before: usize = lengths.iter().sum();
    let scores = if tokens_before > budget {
        score_paragraphs(&texts, summary)?
    } else {
        vec![0.0; texts.len()]
    };
    let mut paragraphs: Vec<Option<Paragraph>> = texts
        .into_iter()
        .zip(lengths)
        .zip(&scores)
        .enumerate()
        .map(|(index, ((text, token_len), &score))| {
            Some(Paragraph {
                index,
                text,
                score,
                token_len,
            })
        })
        .collect();

    let mut total = tokens_before;
    let mut remaining = paragraphs.len();
    let mut removed = Vec::new();
    if total > budget {
        for i in removal_order(&scores) {
            if total <= budget || remaining == 1 {
                break;
            }
            let p = paragraphs[i].take().expect("each index removed once");
            total -= p.token_len;
            remaining -= 1;
            removed.push(i);
        }
    }
    let mut kept: Vec<Paragraph> = paragraphs.into_iter().flatten().collect();

    let mut hard_cut = false;
    if total > budget {
        let p = &mut kept[0];
        p.text = token_prefix(&p.text, budget, counter);
        p.token_len = budget;
        total = budget;
        hard_cut = true;
    }
    Ok(TruncatedArticle {
        paragraphs: kept,
        total_tokens: total,
        tokens_before,
        removed,
        hard_cut,
    })
}

/// Prefix of `text` ending at the end of its `n`-th token.
///
/// Both segmenters are greedy left to right, so re-segmenting the prefix
/// reproduces the same first `n` tokens.
fn token_prefix<C: TokenCounter + ?Sized>(text: &str, n: usize, counter: &C) -> String {
    match counter.token_spans(text).get(n.saturating_sub(1)) {
        Some(span) if n > 0 => text[..span.end].to_string(),
        Some(_) => String::new(),
        None => text.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{SubwordVocab, WordCounter};
    use proptest::prelude::*;

    fn para(word: &str, n: usize) -> String {
        vec![word; n].join(" ")
    }

    #[test]
    fn score_examples() {
        let paras = vec!["x y z".to_string(), "p q".to_string(), "x p".to_string()];
        assert_eq!(score_paragraphs(&paras, "x y").unwrap(), vec![1.0, 0.0, 0.5]);
        assert_eq!(
            score_paragraphs(&paras, "  ۔ "),
            Err(TruncationError::EmptySummary)
        );
    }

    #[test]
    fn fits_already() {
        let t = truncate_article("a b\n\nc d", "a", 512, &WordCounter).unwrap();
        assert!(t.is_unchanged());
        assert_eq!(t.text(), "a b\n\nc d");
        assert_eq!(t.total_tokens, 4);
    }

    #[test]
    fn greedy_loop_by_hand() {
        // ten distinct summary words; the 300-word paragraphs cover 2, 9
        // and 5 of them, so scores are (0.2, 0.9, 0.5)
        let summary: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let build = |cover: usize| {
            let mut words: Vec<String> = summary[..cover].to_vec();
            words.resize(300, "filler".to_string());
            words.join(" ")
        };
        let article = [build(2), build(9), build(5)].join("\n\n");
        let t = truncate_article(&article, &summary.join(" "), 512, &WordCounter).unwrap();
        assert_eq!(t.removed, vec![0, 2]);
        assert_eq!(t.paragraphs.len(), 1);
        assert_eq!(t.paragraphs[0].index, 1);
        assert_eq!(t.paragraphs[0].score, 0.9);
        assert_eq!(t.total_tokens, 300);
        assert_eq!(t.tokens_before, 900);
        assert!(!t.hard_cut);
    }

    #[test]
    fn ties_remove_later_paragraph() {
        let article = [para("a", 5), para("b", 5), para("c", 5)].join("\n\n");
        let t = truncate_article(&article, "z", 10, &WordCounter).unwrap();
        assert_eq!(t.removed, vec![2]);
        assert_eq!(t.text(), [para("a", 5), para("b", 5)].join("\n\n"));
    }

    #[test]
    fn oversized_single_paragraph_is_cut() {
        let t = truncate_article(&para("لفظ", 600), "لفظ", 512, &WordCounter).unwrap();
        assert!(t.hard_cut);
        assert_eq!(t.total_tokens, 512);
        assert_eq!(WordCounter.count_tokens(&t.text()), 512);
        assert!(t.removed.is_empty());
    }

    #[test]
    fn subword_budget_cut_is_exact() {
        let v = SubwordVocab::parse("#unk=0\n<unk>\na\nab\nb\n").unwrap();
        let article = "abab aab, b ".repeat(20);
        for budget in [1, 2, 3, 7, 19] {
            let t = truncate_article(&article, "ab", budget, &v).unwrap();
            assert!(t.hard_cut);
            assert_eq!(v.count_tokens(&t.text()), budget, "budget {budget}");
        }
    }

    #[test]
    fn errors() {
        assert_eq!(
            truncate_article("\n\n", "x", 5, &WordCounter),
            Err(TruncationError::EmptyArticle)
        );
        assert_eq!(
            truncate_article("x", "x", 0, &WordCounter),
            Err(TruncationError::ZeroBudget)
        );
    }

    proptest! {
        #[test]
        fn prefix_has_exact_count(words in prop::collection::vec("[abc]{1,5}[,.]?", 1..30), n in 1usize..20) {
            let v = SubwordVocab::parse("#unk=0\n<unk>\na\nb\nabc\nbc\n").unwrap();
            let text = words.join(" ");
            prop_assume!(v.count_tokens(&text) >= n);
            prop_assert_eq!(v.count_tokens(&token_prefix(&text, n, &v)), n);
            prop_assert_eq!(WordCounter.count_tokens(&token_prefix(&text, 1, &WordCounter)), 1);
        }
    }
}
