//! Modality-agnostic token sequences with sentence (phrase) IDs.

use serde::{Deserialize, Serialize};
use std::ops::Range;

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const EOS: &str = "[EOS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";

/// Special tokens in id order; they occupy ids `0..SPECIALS.len()` in every vocabulary.
pub const SPECIALS: [&str; 5] = [PAD, UNK, EOS, SEP, MASK];

/// Sentence ID of every token: the number of `[SEP]`s strictly before it.
/// A `[SEP]` therefore belongs to the sentence it terminates.
pub fn sentence_ids<S: AsRef<str>>(tokens: &[S]) -> Vec<usize> {
    let mut id = 0;
    tokens
        .iter()
        .map(|t| {
            let cur = id;
            if t.as_ref() == SEP {
                id += 1;
            }
            cur
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<String>,
    pub sentence_ids: Vec<usize>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Self {
        let sentence_ids = sentence_ids(&tokens);
        Self { tokens, sentence_ids }
    }

    /// Parses one line of the space-separated token file format.
    pub fn parse_line(line: &str) -> Self {
        Self::new(line.split_whitespace().map(str::to_owned).collect())
    }

    pub fn to_line(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn sentence_count(&self) -> usize {
        self.tokens.iter().filter(|t| *t == SEP).count()
    }

    /// Token ranges of each `[SEP]`-terminated sentence, including the `[SEP]`.
    /// Trailing tokens without a closing `[SEP]` form a final range.
    pub fn sentence_ranges(&self) -> Vec<Range<usize>> {
        sentence_ranges(&self.tokens)
    }
}

pub fn sentence_ranges<S: AsRef<str>>(tokens: &[S]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for (i, t) in tokens.iter().enumerate() {
        if t.as_ref() == SEP {
            out.push(start..i + 1);
            start = i + 1;
        }
    }
    if start < tokens.len() {
        out.push(start..tokens.len());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_increment_after_sep() {
        let s = TokenSequence::parse_line("a b [SEP] c [SEP]");
        assert_eq!(s.sentence_ids, vec![0, 0, 0, 1, 1]);
        assert_eq!(s.sentence_count(), 2);
        assert_eq!(s.sentence_ranges(), vec![0..3, 3..5]);
        assert_eq!(s.to_line(), "a b [SEP] c [SEP]");
    }

    #[test]
    fn unterminated_tail() {
        let s = TokenSequence::parse_line("a [SEP] b c");
        assert_eq!(s.sentence_ranges(), vec![0..2, 2..4]);
    }
}
