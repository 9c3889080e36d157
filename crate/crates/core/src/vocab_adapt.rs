//! Shrinking a multilingual vocabulary to the pieces a monolingual corpus
//! actually uses, and cutting the embedding matrix to match.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Record;
use crate::embedding::EmbeddingStore;
use crate::scalar::Scalar;
use crate::text::{SubwordVocab, VocabError};

/// Vocabulary size of the adapted monolingual model.
pub const DEFAULT_TARGET_SIZE: usize = 40_000;

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("target size {target} is below the {specials} special pieces")]
    TargetTooSmall { target: usize, specials: usize },
    #[error("matrix has {rows} rows but the source vocabulary has {vocab} pieces")]
    RowMismatch { rows: usize, vocab: usize },
    #[error("frequency table covers {table} ids but the vocabulary has {vocab}")]
    TableMismatch { table: usize, vocab: usize },
    #[error("remap line {line}: {message}")]
    BadRemap { line: usize, message: String },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Piece-id occurrence counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreqTable {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl FreqTable {
    pub fn zeros(size: usize) -> Self {
        Self {
            counts: vec![0; size],
            total: 0,
        }
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts.get(id as usize).copied().unwrap_or(0)
    }

    fn add_text(&mut self, vocab: &SubwordVocab, text: &str) {
        for id in vocab.tokenize(text) {
            self.counts[id as usize] += 1;
            self.total += 1;
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self.total += other.total;
        self
    }
}

/// Counts subword pieces over every article and summary.
pub fn count_frequencies(corpus: &[Record], vocab: &SubwordVocab) -> FreqTable {
    count_text_frequencies(
        corpus
            .par_iter()
            .flat_map_iter(|r| [r.article.as_str(), r.summary.as_str()]),
        vocab,
    )
}

/// Counts subword pieces over arbitrary texts.
pub fn count_text_frequencies<'a>(
    texts: impl ParallelIterator<Item = &'a str>,
    vocab: &SubwordVocab,
) -> FreqTable {
    texts
        .fold(
            || FreqTable::zeros(vocab.len()),
            |mut t, text| {
                t.add_text(vocab, text);
                t
            },
        )
        .reduce(|| FreqTable::zeros(vocab.len()), FreqTable::merge)
}

/// Old-to-new id mapping produced by [`select_vocabulary`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabMap {
    /// Kept old ids, ascending. New id = position.
    pub kept: Vec<u32>,
    pub old_to_new: HashMap<u32, u32>,
    pub new_vocab: SubwordVocab,
}

impl VocabMap {
    fn from_kept(kept: Vec<u32>, source: &SubwordVocab) -> Result<Self, VocabError> {
        let old_to_new: HashMap<u32, u32> = kept
            .iter()
            .enumerate()
            .map(|(new, &old)| (old, new as u32))
            .collect();
        let pieces = kept
            .iter()
            .map(|&old| source.piece(old).expect("kept id is valid").to_string())
            .collect();
        let specials = source.special_ids().iter().map(|id| old_to_new[id]);
        let new_vocab = SubwordVocab::new(pieces, specials, old_to_new[&source.unk_id()])?;
        Ok(Self {
            kept,
            old_to_new,
            new_vocab,
        })
    }

    pub fn map_id(&self, old: u32) -> Option<u32> {
        self.old_to_new.get(&old).copied()
    }

    /// `old_id<TAB>new_id` per kept piece.
    pub fn write_remap<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (new, old) in self.kept.iter().enumerate() {
            writeln!(w, "{old}\t{new}")?;
        }
        w.flush()
    }
}

/// Parses a remap TSV into `(old, new)` pairs.
pub fn read_remap<R: BufRead>(r: R) -> Result<Vec<(u32, u32)>, AdaptError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: &str| AdaptError::BadRemap {
            line: i + 1,
            message: message.to_string(),
        };
        let (old, new) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
        let old = old.trim().parse().map_err(|_| bad("bad old id"))?;
        let new = new.trim().parse().map_err(|_| bad("bad new id"))?;
        out.push((old, new));
    }
    Ok(out)
}

/// Keeps every special id plus the most frequent non-special ids (ties:
/// lower id) up to `target_size` pieces. A target at or above the source
/// size keeps everything.
pub fn select_vocabulary(
    freqs: &FreqTable,
    source: &SubwordVocab,
    target_size: usize,
) -> Result<VocabMap, AdaptError> {
    let specials = source.special_ids().len();
    if target_size < specials {
        return Err(AdaptError::TargetTooSmall {
            target: target_size,
            specials,
        });
    }
    if freqs.counts.len() != source.len() {
        return Err(AdaptError::TableMismatch {
            table: freqs.counts.len(),
            vocab: source.len(),
        });
    }
    if target_size >= source.len() {
        if target_size > source.len() {
            log::warn!(
                "target size {target_size} exceeds vocabulary size {}; keeping all pieces",
                source.len()
            );
        }
        return Ok(VocabMap::from_kept((0..source.len() as u32).collect(), source)?);
    }
    let mut candidates: Vec<u32> = (0..source.len() as u32)
        .filter(|id| !source.is_special(*id))
        .collect();
    candidates.sort_by(|&a, &b| freqs.count(b).cmp(&freqs.count(a)).then(a.cmp(&b)));
    let mut kept: Vec<u32> = source.special_ids().iter().copied().collect();
    kept.extend(candidates.into_iter().take(target_size - specials));
    kept.sort_unstable();
    Ok(VocabMap::from_kept(kept, source)?)
}

/// Copies row `kept[j]` of `matrix` into row `j` of the result, keyed by the
/// new id.
pub fn prune_embeddings<T: Scalar>(
    matrix: &EmbeddingStore<T>,
    map: &VocabMap,
    source_size: usize,
) -> Result<EmbeddingStore<T>, AdaptError> {
    if matrix.len() != source_size {
        return Err(AdaptError::RowMismatch {
            rows: matrix.len(),
            vocab: source_size,
        });
    }
    let mut out = EmbeddingStore::new(matrix.dimension());
    for (new, &old) in map.kept.iter().enumerate() {
        out.push(new.to_string(), matrix.row(old as usize))
            .expect("rows from a valid store are valid");
    }
    Ok(out)
}

/// Shape and serialized size of an embedding matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixMeta {
    pub rows: u64,
    pub dim: u64,
    pub bytes: u64,
}

impl MatrixMeta {
    pub fn of<T: Scalar>(store: &EmbeddingStore<T>) -> Self {
        Self {
            rows: store.len() as u64,
            dim: store.dimension() as u64,
            bytes: store.serialized_len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub rows_before: u64,
    pub rows_after: u64,
    pub bytes_before: u64,
    pub bytes_after: u64,
    /// `rows_after / rows_before`.
    pub retained_fraction: f64,
    /// `100 × (1 − bytes_after / bytes_before)`.
    pub reduction_pct: f64,
}

pub fn size_report(before: MatrixMeta, after: MatrixMeta) -> SizeReport {
    let frac = |a: u64, b: u64| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    SizeReport {
        rows_before: before.rows,
        rows_after: after.rows,
        bytes_before: before.bytes,
        bytes_after: after.bytes,
        retained_fraction: frac(after.rows, before.rows),
        reduction_pct: 100.0 * (1.0 - frac(after.bytes, before.bytes)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Source;

    fn vocab(pieces: &[&str], specials: &[u32]) -> SubwordVocab {
        SubwordVocab::new(pieces.iter().map(|s| s.to_string()).collect(), specials.iter().copied(), specials[0])
            .unwrap()
    }

    fn record(article: &str) -> Record {
        Record {
            id: "r".into(),
            source: Source::Other,
            url: None,
            title: String::new(),
            article: article.into(),
            summary: String::new(),
        }
    }

    #[test]
    fn counting() {
        let v = vocab(&["<unk>", "a", "b"], &[0]);
        let f = count_frequencies(&[record("a a b")], &v);
        assert_eq!(f.counts, vec![0, 2, 1]);
        assert_eq!(f.total, 3);
        let f = count_frequencies(&[], &v);
        assert_eq!(f, FreqTable::zeros(3));
        let f = count_frequencies(&[record("x y")], &v);
        assert_eq!(f.counts, vec![2, 0, 0]);
    }

    #[test]
    fn selection_rule() {
        let v = vocab(&["<unk>", "p", "q", "r"], &[0]);
        let f = FreqTable {
            counts: vec![0, 5, 5, 9],
            total: 19,
        };
        let m = select_vocabulary(&f, &v, 3).unwrap();
        assert_eq!(m.kept, vec![0, 1, 3]);
        assert_eq!(m.map_id(3), Some(2));
        assert_eq!(m.map_id(2), None);
        assert_eq!(m.new_vocab.pieces(), &["<unk>", "p", "r"]);

        let m = select_vocabulary(&f, &v, 4).unwrap();
        assert_eq!(m.kept, vec![0, 1, 2, 3]);
        let m = select_vocabulary(&f, &v, 10).unwrap();
        assert_eq!(m.kept.len(), 4);
        let m = select_vocabulary(&f, &v, 1).unwrap();
        assert_eq!(m.kept, vec![0]);
        assert!(matches!(
            select_vocabulary(&f, &v, 0),
            Err(AdaptError::TargetTooSmall { .. })
        ));
    }

    #[test]
    fn specials_survive_with_zero_counts() {
        let v = vocab(&["<pad>", "a", "<unk>", "b", "</s>"], &[2, 0, 4]);
        let f = FreqTable {
            counts: vec![0, 100, 0, 50, 0],
            total: 150,
        };
        let m = select_vocabulary(&f, &v, 4).unwrap();
        assert_eq!(m.kept, vec![0, 1, 2, 4]);
        assert_eq!(m.new_vocab.unk_id(), 2);
        assert_eq!(m.new_vocab.special_ids().len(), 3);
    }

    #[test]
    fn prune_rows() {
        let v = vocab(&["<unk>", "a", "b", "c"], &[0]);
        let mut store = EmbeddingStore::<f32>::new(2);
        for i in 0..4 {
            store.push(i.to_string(), &[i as f32, -(i as f32) * 0.5]).unwrap();
        }
        let f = FreqTable {
            counts: vec![0, 1, 0, 7],
            total: 8,
        };
        let m = select_vocabulary(&f, &v, 3).unwrap();
        let pruned = prune_embeddings(&store, &m, v.len()).unwrap();
        assert_eq!(pruned.len(), 3);
        assert_eq!(pruned.row(2), store.row(3));
        assert_eq!(pruned.keys(), &["0", "1", "2"]);
        assert!(matches!(
            prune_embeddings(&store, &m, 5),
            Err(AdaptError::RowMismatch { rows: 4, vocab: 5 })
        ));
    }

    #[test]
    fn report_arithmetic() {
        let before = MatrixMeta { rows: 1000, dim: 8, bytes: 32_000 };
        let after = MatrixMeta { rows: 400, dim: 8, bytes: 12_800 };
        let r = size_report(before, after);
        assert_eq!(r.retained_fraction, 0.4);
        assert!((r.reduction_pct - 60.0).abs() < 1e-12);
        let r = size_report(before, before);
        assert_eq!(r.reduction_pct, 0.0);
        assert_eq!(r.retained_fraction, 1.0);
    }

    #[test]
    fn remap_roundtrip() {
        let v = vocab(&["<unk>", "a", "b", "c"], &[0]);
        let f = FreqTable {
            counts: vec![0, 3, 1, 2],
            total: 6,
        };
        let m = select_vocabulary(&f, &v, 3).unwrap();
        let mut buf = Vec::new();
        m.write_remap(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "0\t0\n1\t1\n3\t2\n");
        let pairs = read_remap(buf.as_slice()).unwrap();
        assert!(pairs.iter().all(|&(old, new)| m.map_id(old) == Some(new)));
        assert!(read_remap("1 2\n".as_bytes()).is_err());
    }
}
