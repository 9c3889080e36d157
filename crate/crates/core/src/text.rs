//! Deterministic segmentation for Urdu-like text: words, sentences,
//! paragraphs and greedy longest-match subwords.
//!
//! Every token count used by the rest of the crate comes from here, so the
//! rules are intentionally small and fixed.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::ops::Range;
use std::path::Path;

use thiserror::Error;

/// Urdu full stop.
pub const URDU_FULL_STOP: char = '\u{06D4}';
/// Arabic question mark, used in Urdu.
pub const URDU_QUESTION: char = '\u{061F}';
/// Arabic comma.
pub const URDU_COMMA: char = '\u{060C}';

/// Sentence terminals used by [`sentence_split`].
pub const DEFAULT_TERMINALS: &[char] = &[URDU_FULL_STOP, URDU_QUESTION, '!', '?', '.'];

const EXTRA_PUNCTUATION: &[char] = &[
    URDU_FULL_STOP,
    URDU_QUESTION,
    URDU_COMMA,
    '\u{061B}', // Arabic semicolon
    '\u{066A}', // Arabic percent sign
    '\u{066B}',
    '\u{066C}',
    '\u{06DD}',
    '\u{00AB}',
    '\u{00BB}',
    '\u{2018}',
    '\u{2019}',
    '\u{201C}',
    '\u{201D}',
    '\u{2013}',
    '\u{2014}',
    '\u{2026}',
];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("vocabulary is empty")]
    Empty,
    #[error("duplicate piece {piece:?} at line {line}")]
    DuplicatePiece { piece: String, line: usize },
    #[error("empty piece at line {line}")]
    EmptyPiece { line: usize },
    #[error("malformed header {header:?}")]
    BadHeader { header: String },
    #[error("special id {id} out of range for {size} pieces")]
    SpecialOutOfRange { id: u32, size: usize },
    #[error("no unknown-token id declared (use #unk=<id> or an <unk>/[UNK] piece)")]
    MissingUnk,
    #[error("failed to read vocabulary: {0}")]
    Io(#[from] std::io::Error),
}

/// True for characters detached into their own word token.
pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || EXTRA_PUNCTUATION.contains(&c)
}

/// True when every character of `token` is punctuation.
pub fn is_punctuation_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punctuation)
}

/// Word tokens with their byte spans in `text`.
pub fn word_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() || is_punctuation(c) {
            if let Some(s) = start.take() {
                spans.push(s..i);
            }
            if !c.is_whitespace() {
                spans.push(i..i + c.len_utf8());
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        spans.push(s..text.len());
    }
    spans
}

/// Splits on whitespace and detaches every punctuation character
/// (including `۔ ؟ ،`) into its own token.
pub fn word_tokenize(text: &str) -> Vec<String> {
    word_spans(text)
        .into_iter()
        .map(|r| text[r].to_string())
        .collect()
}

/// Sentence segmentation with a configurable terminal set.
#[derive(Debug, Clone)]
pub struct SentenceSplitter {
    terminals: Vec<char>,
}

impl Default for SentenceSplitter {
    fn default() -> Self {
        Self {
            terminals: DEFAULT_TERMINALS.to_vec(),
        }
    }
}

impl SentenceSplitter {
    pub fn new(terminals: impl Into<Vec<char>>) -> Self {
        Self {
            terminals: terminals.into(),
        }
    }

    /// A sentence ends after a terminal mark that is followed by whitespace
    /// or end of text. Trailing unterminated text forms a final sentence.
    pub fn split(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut start = 0;
        let mut chars = text.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            if !self.terminals.contains(&c) {
                continue;
            }
            let boundary = match chars.peek() {
                None => true,
                Some((_, next)) => next.is_whitespace(),
            };
            if boundary {
                let end = i + c.len_utf8();
                push_trimmed(&mut out, &text[start..end]);
                start = end;
            }
        }
        push_trimmed(&mut out, &text[start..]);
        out
    }
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

/// [`SentenceSplitter`] with the default terminal set.
pub fn sentence_split(text: &str) -> Vec<String> {
    SentenceSplitter::default().split(text)
}

/// Splits on blank (whitespace-only) lines; paragraphs are trimmed and
/// empty ones dropped.
pub fn paragraph_split(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                push_trimmed(&mut out, &current.join("\n"));
                current.clear();
            }
        } else {
            current.push(line);
        }
    }
    if !current.is_empty() {
        push_trimmed(&mut out, &current.join("\n"));
    }
    out
}

/// Anything that can measure text length in tokens.
pub trait TokenCounter: Sync {
    /// Byte span of every token, in order.
    fn token_spans(&self, text: &str) -> Vec<Range<usize>>;

    fn count_tokens(&self, text: &str) -> usize {
        self.token_spans(text).len()
    }
}

/// Counts rule-based word tokens.
#[derive(Debug, Clone, Copy, Default)]
pub struct WordCounter;

impl TokenCounter for WordCounter {
    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        word_spans(text)
    }
}

/// Subword vocabulary. A piece's id is its position in `pieces`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordVocab {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
    special_ids: BTreeSet<u32>,
    unk_id: u32,
    max_piece_chars: usize,
}

impl SubwordVocab {
    /// Builds a vocabulary; `unk_id` is added to the special set.
    pub fn new(
        pieces: Vec<String>,
        special_ids: impl IntoIterator<Item = u32>,
        unk_id: u32,
    ) -> Result<Self, VocabError> {
        if pieces.is_empty() {
            return Err(VocabError::Empty);
        }
        let mut index = HashMap::with_capacity(pieces.len());
        let mut max_piece_chars = 0;
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() {
                return Err(VocabError::EmptyPiece { line: i + 1 });
            }
            if index.insert(p.clone(), i as u32).is_some() {
                return Err(VocabError::DuplicatePiece {
                    piece: p.clone(),
                    line: i + 1,
                });
            }
            max_piece_chars = max_piece_chars.max(p.chars().count());
        }
        let mut special_ids: BTreeSet<u32> = special_ids.into_iter().collect();
        special_ids.insert(unk_id);
        if let Some(&id) = special_ids.iter().find(|&&id| id as usize >= pieces.len()) {
            return Err(VocabError::SpecialOutOfRange {
                id,
                size: pieces.len(),
            });
        }
        Ok(Self {
            pieces,
            index,
            special_ids,
            unk_id,
            max_piece_chars,
        })
    }

    /// Parses the vocab file format: optional leading `#unk=<id>` and
    /// `#special=<id,id,...>` header lines, then one piece per line.
    pub fn parse(text: &str) -> Result<Self, VocabError> {
        let mut unk: Option<u32> = None;
        let mut specials: Vec<u32> = Vec::new();
        let mut lines = text.lines().peekable();
        while let Some(line) = lines.peek() {
            let line = line.trim_end_matches('\r');
            if let Some(v) = line.strip_prefix("#unk=") {
                unk = Some(parse_id(v, line)?);
            } else if let Some(v) = line.strip_prefix("#special=") {
                for part in v.split(',').filter(|p| !p.trim().is_empty()) {
                    specials.push(parse_id(part, line)?);
                }
            } else {
                break;
            }
            lines.next();
        }
        let pieces: Vec<String> = lines
            .map(|l| l.trim_end_matches('\r').to_string())
            .collect();
        // a trailing newline is not an empty piece
        let pieces = match pieces.last() {
            Some(last) if last.is_empty() => pieces[..pieces.len() - 1].to_vec(),
            _ => pieces,
        };
        let unk_id = match unk {
            Some(id) => id,
            None => pieces
                .iter()
                .position(|p| p == "<unk>" || p == "[UNK]")
                .map(|i| i as u32)
                .ok_or(if pieces.is_empty() {
                    VocabError::Empty
                } else {
                    VocabError::MissingUnk
                })?,
        };
        Self::new(pieces, specials, unk_id)
    }

    /// Serializes in the same format [`SubwordVocab::parse`] reads.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("#unk={}\n", self.unk_id);
        let specials: Vec<String> = self.special_ids.iter().map(u32::to_string).collect();
        out.push_str(&format!("#special={}\n", specials.join(",")));
        for p in &self.pieces {
            out.push_str(p);
            out.push('\n');
        }
        out
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn special_ids(&self) -> &BTreeSet<u32> {
        &self.special_ids
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.special_ids.contains(&id)
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    /// Id of a non-special piece.
    pub fn id_of(&self, piece: &str) -> Option<u32> {
        self.index
            .get(piece)
            .copied()
            .filter(|id| !self.special_ids.contains(id))
    }

    /// Greedy longest-prefix segmentation of each word token. Characters
    /// no piece covers become `unk_id`. Special pieces never match text.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        self.tokenize_with_spans(text)
            .into_iter()
            .map(|(id, _)| id)
            .collect()
    }

    /// Like [`SubwordVocab::tokenize`], also returning each piece's byte
    /// span in `text`.
    pub fn tokenize_with_spans(&self, text: &str) -> Vec<(u32, Range<usize>)> {
        let mut out = Vec::new();
        for word in word_spans(text) {
            let w = &text[word.clone()];
            // char boundary offsets within the word, including the end
            let bounds: Vec<usize> = w
                .char_indices()
                .map(|(i, _)| i)
                .chain(std::iter::once(w.len()))
                .collect();
            let mut pos = 0;
            while pos + 1 < bounds.len() {
                let longest = (pos + 1..bounds.len().min(pos + self.max_piece_chars + 1))
                    .rev()
                    .find_map(|end| {
                        self.id_of(&w[bounds[pos]..bounds[end]])
                            .map(|id| (id, end))
                    });
                let (id, end) = longest.unwrap_or((self.unk_id, pos + 1));
                out.push((id, word.start + bounds[pos]..word.start + bounds[end]));
                pos = end;
            }
        }
        out
    }
}

fn parse_id(v: &str, line: &str) -> Result<u32, VocabError> {
    v.trim().parse().map_err(|_| VocabError::BadHeader {
        header: line.to_string(),
    })
}

impl TokenCounter for SubwordVocab {
    fn token_spans(&self, text: &str) -> Vec<Range<usize>> {
        self.tokenize_with_spans(text)
            .into_iter()
            .map(|(_, span)| span)
            .collect()
    }
}

impl fmt::Display for SubwordVocab {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "SubwordVocab({} pieces, {} special, unk={})",
            self.pieces.len(),
            self.special_ids.len(),
            self.unk_id
        )
    }
}

/// Free-function form of [`SubwordVocab::tokenize`].
pub fn subword_tokenize(vocab: &SubwordVocab, text: &str) -> Vec<u32> {
    vocab.tokenize(text)
}

/// Reads a vocab file (see [`SubwordVocab::parse`]).
pub fn load_vocab(path: impl AsRef<Path>) -> Result<SubwordVocab, VocabError> {
    let text = std::fs::read_to_string(path)?;
    SubwordVocab::parse(&text)
}
