//! Token sequences, subword-to-word maps and the integer-ID corpus format.
//!
//! A corpus line is whitespace-separated token IDs. Subwords of one word may
//! be joined with `+` (`12+13 40 7` is three words over four tokens); plain
//! lines treat every token as its own word. `</s>` is appended by the
//! constructors below and never belongs to a word.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SequenceRole {
    Source,
    TargetPrefix,
}

/// Maps each token position to a word index; `None` marks special tokens.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordMap {
    word_of: Vec<Option<usize>>,
}

impl WordMap {
    /// Validates that words are numbered `0..n` without gaps and in order of
    /// first appearance.
    pub fn new(word_of: Vec<Option<usize>>) -> Result<Self> {
        let mut next = 0usize;
        for (pos, w) in word_of.iter().enumerate() {
            if let Some(w) = *w {
                if w > next {
                    return Err(Error::WordMap(format!(
                        "word map gap: position {pos} maps to word {w} before word {next} appears"
                    )));
                }
                if w == next {
                    next += 1;
                }
            }
        }
        Ok(Self { word_of })
    }

    /// One word per position.
    pub fn identity(len: usize) -> Self {
        Self {
            word_of: (0..len).map(Some).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.word_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_of.is_empty()
    }

    pub fn word_of(&self, pos: usize) -> Option<usize> {
        self.word_of.get(pos).copied().flatten()
    }

    pub fn num_words(&self) -> usize {
        self.word_of.iter().flatten().max().map_or(0, |m| m + 1)
    }

    /// Appends a special (wordless) position.
    pub fn push_special(&mut self) {
        self.word_of.push(None);
    }

    pub fn as_slice(&self) -> &[Option<usize>] {
        &self.word_of
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub role: SequenceRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub words: Option<WordMap>,
}

impl TokenSequence {
    /// A source sentence; must end with `</s>`.
    pub fn source(ids: Vec<u32>, eos: u32) -> Result<Self> {
        if ids.last() != Some(&eos) {
            return Err(Error::InvalidSequence(
                "source must be non-empty and end with </s>".into(),
            ));
        }
        Ok(Self {
            ids,
            role: SequenceRole::Source,
            words: None,
        })
    }

    /// A target prefix `y_0 .. y_{T-1}`; must start with `</s>`.
    pub fn target_prefix(ids: Vec<u32>, eos: u32) -> Result<Self> {
        if ids.first() != Some(&eos) {
            return Err(Error::InvalidSequence(
                "target prefix must be non-empty and start with </s>".into(),
            ));
        }
        Ok(Self {
            ids,
            role: SequenceRole::TargetPrefix,
            words: None,
        })
    }

    pub fn with_words(mut self, words: WordMap) -> Result<Self> {
        if words.len() != self.ids.len() {
            return Err(Error::LengthMismatch {
                context: "word map vs token sequence".into(),
                expected: self.ids.len(),
                found: words.len(),
            });
        }
        self.words = Some(words);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One parsed corpus line: token IDs plus the word each belongs to.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusLine {
    pub ids: Vec<u32>,
    pub words: WordMap,
}

impl CorpusLine {
    pub fn parse(line: &str, line_no: usize) -> Result<Self> {
        let mut ids = Vec::new();
        let mut word_of = Vec::new();
        let mut offset = 0usize;
        for (word, group) in line.split_whitespace().enumerate() {
            let col = line[offset..].find(group).map_or(offset, |p| offset + p);
            offset = col + group.len();
            let mut sub_col = col;
            for part in group.split('+') {
                let id: u32 = part.parse().map_err(|_| Error::CorpusParse {
                    line: line_no,
                    column: sub_col + 1,
                    message: format!("expected a token id, found `{part}`"),
                })?;
                ids.push(id);
                word_of.push(Some(word));
                sub_col += part.len() + 1;
            }
        }
        Ok(Self {
            ids,
            words: WordMap { word_of },
        })
    }

    /// Drops a trailing `</s>` written by the user, so it is never a word.
    fn without_trailing_eos(&self, eos: u32) -> (Vec<u32>, Vec<Option<usize>>) {
        let mut ids = self.ids.clone();
        let mut words = self.words.word_of.clone();
        if ids.last() == Some(&eos) {
            ids.pop();
            words.pop();
        }
        (ids, words)
    }

    /// Source sequence `x_1 .. x_J` with `x_J = </s>`.
    pub fn to_source(&self, eos: u32) -> Result<TokenSequence> {
        let (mut ids, mut words) = self.without_trailing_eos(eos);
        ids.push(eos);
        words.push(None);
        TokenSequence::source(ids, eos)?.with_words(WordMap::new(words)?)
    }

    /// Treats the line as a reference translation `y_1 .. y_n`.
    ///
    /// Returns the teacher-forcing prefix `</s> y_1 .. y_n` together with the
    /// word map of the predicted tokens `y_1 .. y_n </s>` (one per prefix row).
    pub fn to_forced_target(&self, eos: u32) -> Result<(TokenSequence, WordMap)> {
        let (ids, mut words) = self.without_trailing_eos(eos);
        let mut prefix = Vec::with_capacity(ids.len() + 1);
        prefix.push(eos);
        prefix.extend_from_slice(&ids);
        words.push(None);
        let predicted = WordMap::new(words)?;
        Ok((TokenSequence::target_prefix(prefix, eos)?, predicted))
    }
}

/// Parses a whole corpus file; blank lines are kept as empty sentences.
pub fn parse_corpus(text: &str) -> Result<Vec<CorpusLine>> {
    text.lines()
        .enumerate()
        .map(|(i, l)| CorpusLine::parse(l, i + 1))
        .collect()
}
