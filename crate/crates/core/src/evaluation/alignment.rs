//! Word alignments: gold file parsing, extraction from contribution
//! matrices, and alignment error rate.
//!
//! Gold files hold one line per sentence of space-separated links: `i-j` is a
//! sure link and `i?j` a possible one, with 1-indexed source word `i` and
//! target word `j`. Internally pairs are 0-indexed `(source, target)`.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::tokens::WordMap;

/// `(source word, target word)`, 0-indexed.
pub type WordPair = (usize, usize);

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AlignmentSet {
    pub sentence_id: usize,
    pub sure: BTreeSet<WordPair>,
    /// Always a superset of `sure`.
    pub possible: BTreeSet<WordPair>,
}

impl AlignmentSet {
    /// Builds a set, adding every sure link to the possible links.
    pub fn new(sentence_id: usize, sure: BTreeSet<WordPair>, possible: BTreeSet<WordPair>) -> Self {
        let possible = possible.union(&sure).copied().collect();
        Self {
            sentence_id,
            sure,
            possible,
        }
    }

    /// Checks that every link fits the sentence's word counts.
    pub fn check_bounds(&self, source_words: usize, target_words: usize) -> Result<()> {
        if let Some(&(s, t)) = self
            .possible
            .iter()
            .find(|&&(s, t)| s >= source_words || t >= target_words)
        {
            return Err(Error::WordMap(format!(
                "gold sentence {}: link {}-{} outside {source_words} source / {target_words} target words",
                self.sentence_id,
                s + 1,
                t + 1
            )));
        }
        Ok(())
    }
}

/// Parses a gold alignment file; line `n` becomes sentence `n - 1`.
pub fn parse_gold_alignments(text: &str) -> Result<Vec<AlignmentSet>> {
    let mut out = Vec::new();
    for (line_idx, line) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let mut sure = BTreeSet::new();
        let mut possible = BTreeSet::new();
        let mut offset = 0usize;
        for link in line.split_whitespace() {
            let col = line[offset..].find(link).map_or(offset, |p| offset + p) + 1;
            offset = col - 1 + link.len();
            let err = |column: usize, message: String| Error::AlignmentParse {
                line: line_no,
                column,
                message,
            };
            let (sep_pos, sep) = link
                .char_indices()
                .find(|(_, c)| *c == '-' || *c == '?')
                .ok_or_else(|| err(col, format!("link `{link}` has no `-` or `?` separator")))?;
            let (lhs, rhs) = (&link[..sep_pos], &link[sep_pos + 1..]);
            let parse_index = |s: &str, column: usize| -> Result<usize> {
                match s.parse::<usize>() {
                    Ok(0) => Err(err(column, "word indices are 1-based".into())),
                    Ok(v) => Ok(v - 1),
                    Err(_) => Err(err(column, format!("expected a word index, found `{s}`"))),
                }
            };
            let i = parse_index(lhs, col)?;
            let j = parse_index(rhs, col + sep_pos + 1)?;
            if sep == '-' {
                sure.insert((i, j));
            } else {
                possible.insert((i, j));
            }
        }
        out.push(AlignmentSet::new(line_idx, sure, possible));
    }
    Ok(out)
}

/// Extracts one link per target word from a `target x source` matrix.
///
/// Cells are first summed into word-level cells using both word maps.
/// Positions mapped to `None` (such as `</s>`) are ignored, so the source
/// `</s>` column never wins. Ties go to the lower source word.
pub fn extract_alignments(
    matrix: &Matrix<f64>,
    source_words: &WordMap,
    target_words: &WordMap,
) -> Result<BTreeSet<WordPair>> {
    if matrix.rows() == 0 || matrix.cols() == 0 {
        return Err(Error::Empty("alignment matrix"));
    }
    if source_words.len() != matrix.cols() {
        return Err(Error::WordMap(format!(
            "source word map covers {} positions, matrix has {} columns",
            source_words.len(),
            matrix.cols()
        )));
    }
    if target_words.len() != matrix.rows() {
        return Err(Error::WordMap(format!(
            "target word map covers {} positions, matrix has {} rows",
            target_words.len(),
            matrix.rows()
        )));
    }
    let (ns, nt) = (source_words.num_words(), target_words.num_words());
    if ns == 0 {
        return Err(Error::Empty("source words"));
    }
    let mut cells = vec![vec![0.0f64; ns]; nt];
    for r in 0..matrix.rows() {
        let Some(tw) = target_words.word_of(r) else { continue };
        for c in 0..matrix.cols() {
            if let Some(sw) = source_words.word_of(c) {
                cells[tw][sw] += matrix.get(r, c);
            }
        }
    }
    Ok(cells
        .iter()
        .enumerate()
        .map(|(tw, row)| {
            let mut best = 0;
            for (sw, v) in row.iter().enumerate().skip(1) {
                if *v > row[best] {
                    best = sw;
                }
            }
            (best, tw)
        })
        .collect())
}

/// `1 - (|A & S| + |A & P|) / (|A| + |S|)`.
pub fn aer(hypothesis: &BTreeSet<WordPair>, gold: &AlignmentSet) -> Result<f64> {
    let denom = hypothesis.len() + gold.sure.len();
    if denom == 0 {
        return Err(Error::EmptyAer);
    }
    let a_s = hypothesis.intersection(&gold.sure).count();
    let a_p = hypothesis.intersection(&gold.possible).count();
    Ok((denom - a_s - a_p) as f64 / denom as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusAer {
    pub per_sentence: Vec<f64>,
    /// Mean of the per-sentence rates.
    pub mean: f64,
    /// Rate over link counts pooled across the corpus.
    pub pooled: f64,
}

pub fn corpus_aer(hypotheses: &[BTreeSet<WordPair>], gold: &[AlignmentSet]) -> Result<CorpusAer> {
    if hypotheses.len() != gold.len() {
        return Err(Error::LengthMismatch {
            context: "hypothesis alignments vs gold sentences".into(),
            expected: gold.len(),
            found: hypotheses.len(),
        });
    }
    if gold.is_empty() {
        return Err(Error::Empty("alignment corpus"));
    }
    let per_sentence = hypotheses
        .iter()
        .zip(gold)
        .map(|(h, g)| aer(h, g))
        .collect::<Result<Vec<_>>>()?;
    let (mut denom, mut hits) = (0usize, 0usize);
    for (h, g) in hypotheses.iter().zip(gold) {
        denom += h.len() + g.sure.len();
        hits += h.intersection(&g.sure).count() + h.intersection(&g.possible).count();
    }
    let mean = per_sentence.iter().sum::<f64>() / per_sentence.len() as f64;
    Ok(CorpusAer {
        per_sentence,
        mean,
        pooled: (denom - hits) as f64 / denom as f64,
    })
}
