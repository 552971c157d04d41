//! Token counting for context-length statistics.
//!
//! Counts produced here are approximate: the reference statistics were
//! produced by an unnamed tokenizer. The default splitter treats every run
//! of alphanumeric characters as one token and every other non-whitespace
//! character as its own token. [`BpeTokenizer`] applies a merges table on
//! top of the same pre-tokenization for closer agreement with subword
//! vocabularies.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

/// Anything that can count tokens in a piece of text.
pub trait Tokenizer {
    fn count(&self, text: &str) -> usize;

    /// Short identifier recorded in reports.
    fn name(&self) -> &str;
}

impl<T: Tokenizer + ?Sized> Tokenizer for &T {
    fn count(&self, text: &str) -> usize {
        (**self).count(text)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Whitespace-plus-punctuation splitter.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespacePunctTokenizer;

impl WhitespacePunctTokenizer {
    /// Split `text` into word and punctuation pieces.
    pub fn split<'a>(&self, text: &'a str) -> Vec<&'a str> {
        let mut out = Vec::new();
        for chunk in text.split_whitespace() {
            let mut word_start: Option<usize> = None;
            for (i, c) in chunk.char_indices() {
                if c.is_alphanumeric() {
                    if word_start.is_none() {
                        word_start = Some(i);
                    }
                } else {
                    if let Some(s) = word_start.take() {
                        out.push(&chunk[s..i]);
                    }
                    out.push(&chunk[i..i + c.len_utf8()]);
                }
            }
            if let Some(s) = word_start {
                out.push(&chunk[s..]);
            }
        }
        out
    }
}

impl Tokenizer for WhitespacePunctTokenizer {
    fn count(&self, text: &str) -> usize {
        self.split(text).len()
    }

    fn name(&self) -> &str {
        "whitespace-punct"
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum MergesError {
    #[error("merges line {line}: expected two symbols separated by a space")]
    BadLine { line: usize },
    #[error("merges table is empty")]
    Empty,
}

/// Byte-pair-encoding counter driven by a merges table (`left right` per
/// line, highest priority first; `#` lines are comments).
///
/// Words come from [`WhitespacePunctTokenizer`]; each word starts as a
/// sequence of characters and the lowest-ranked adjacent pair is merged
/// until no ranked pair remains.
#[derive(Debug, Clone)]
pub struct BpeTokenizer {
    ranks: BTreeMap<(String, String), usize>,
    name: String,
}

impl BpeTokenizer {
    pub fn from_merges(merges: &str) -> Result<Self, MergesError> {
        let mut ranks = BTreeMap::new();
        for (lineno, line) in merges.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(' ');
            let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(MergesError::BadLine { line: lineno + 1 });
            };
            if a.is_empty() || b.is_empty() {
                return Err(MergesError::BadLine { line: lineno + 1 });
            }
            let rank = ranks.len();
            ranks.entry((a.to_string(), b.to_string())).or_insert(rank);
        }
        if ranks.is_empty() {
            return Err(MergesError::Empty);
        }
        Ok(Self { ranks, name: "bpe".to_string() })
    }

    fn word_pieces(&self, word: &str) -> usize {
        let mut symbols: Vec<String> = word.chars().map(|c| c.to_string()).collect();
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((_, i)) = best else { break };
            let right = symbols.remove(i + 1);
            symbols[i].push_str(&right);
        }
        symbols.len()
    }
}

impl Tokenizer for BpeTokenizer {
    fn count(&self, text: &str) -> usize {
        WhitespacePunctTokenizer
            .split(text)
            .into_iter()
            .map(|w| self.word_pieces(w))
            .sum()
    }

    fn name(&self) -> &str {
        &self.name
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_counting() {
        assert_eq!(WhitespacePunctTokenizer.count("a b c"), 3);
        assert_eq!(WhitespacePunctTokenizer.count(""), 0);
        assert_eq!(WhitespacePunctTokenizer.count("   \n\t "), 0);
    }

    #[test]
    fn punctuation_splits() {
        assert_eq!(
            WhitespacePunctTokenizer.split("Keleş (born 1988), Ankara."),
            ["Keleş", "(", "born", "1988", ")", ",", "Ankara", "."]
        );
    }

    #[test]
    fn bpe_merges_reduce_counts() {
        let bpe = BpeTokenizer::from_merges("#version: 0.2\nl o\nlo w\ne r\n").unwrap();
        // low -> l o w -> lo w -> low
        assert_eq!(bpe.count("low"), 1);
        // lower -> low e r -> low er
        assert_eq!(bpe.count("lower"), 2);
        assert_eq!(bpe.count("xyz"), 3);
        assert_eq!(bpe.count("low, lower"), 1 + 1 + 2);
    }

    #[test]
    fn bpe_rank_order_matters() {
        // "a b" ranked before "b c": abc -> ab c
        let bpe = BpeTokenizer::from_merges("a b\nb c\n").unwrap();
        assert_eq!(bpe.count("abc"), 2);
        let bpe = BpeTokenizer::from_merges("b c\na b\n").unwrap();
        // bc first, then "a bc" has no rule
        assert_eq!(bpe.count("abc"), 2);
        let bpe = BpeTokenizer::from_merges("b c\na bc\n").unwrap();
        assert_eq!(bpe.count("abc"), 1);
    }

    #[test]
    fn bpe_rejects_bad_tables() {
        assert_eq!(BpeTokenizer::from_merges("").unwrap_err(), MergesError::Empty);
        assert_eq!(
            BpeTokenizer::from_merges("a b c\n").unwrap_err(),
            MergesError::BadLine { line: 1 }
        );
    }
}
