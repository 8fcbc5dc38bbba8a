//! Smoothed sentence-level BLEU.
//!
//! Up to 4-grams with clipped counts, add-one smoothing on the 2- to 4-gram
//! precisions (unigram precision is unsmoothed, so zero unigram overlap gives
//! zero), geometric mean and brevity penalty. Scores are on a 0-100 scale.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// `(clipped matches, hypothesis n-grams)` for n = 1..=4.
pub fn ngram_matches<T: Eq + Hash>(hypothesis: &[T], reference: &[T]) -> [(usize, usize); MAX_ORDER] {
    let mut out = [(0, 0); MAX_ORDER];
    for (i, slot) in out.iter_mut().enumerate() {
        let n = i + 1;
        let hyp = ngram_counts(hypothesis, n);
        let reference = ngram_counts(reference, n);
        let matches = hyp
            .iter()
            .map(|(g, c)| (*c).min(reference.get(g).copied().unwrap_or(0)))
            .sum();
        *slot = (matches, hypothesis.len().saturating_sub(n - 1));
    }
    out
}

/// Sentence BLEU of `hypothesis` against a single `reference`.
pub fn sentence_bleu<T: Eq + Hash>(hypothesis: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Empty("BLEU reference"));
    }
    if hypothesis.is_empty() {
        return Ok(0.0);
    }
    let counts = ngram_matches(hypothesis, reference);
    if counts[0].0 == 0 {
        return Ok(0.0);
    }
    let mut log_sum = (counts[0].0 as f64 / counts[0].1 as f64).ln();
    for &(m, total) in &counts[1..] {
        log_sum += ((m as f64 + 1.0) / (total as f64 + 1.0)).ln();
    }
    let (c, r) = (hypothesis.len() as f64, reference.len() as f64);
    let brevity = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    Ok(100.0 * brevity * (log_sum / MAX_ORDER as f64).exp())
}
