//! Hallucination detection by target-prefix perturbation.
//!
//! A translation is flagged when it scores well against the reference but
//! collapses once a single `<unk>` is forced right after the initial `</s>`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::bleu::sentence_bleu;
use crate::model::Transformer;
use crate::scalar::Scalar;
use crate::tokens::TokenSequence;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HallucinationThresholds {
    /// The unperturbed translation must reach at least this BLEU.
    pub min_bleu: f64,
    /// The perturbed translation must fall to at most this BLEU.
    pub max_bleu: f64,
}

impl Default for HallucinationThresholds {
    fn default() -> Self {
        Self {
            min_bleu: 20.0,
            max_bleu: 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HallucinationVerdict {
    pub original_bleu: f64,
    pub perturbed_bleu: f64,
    pub is_hallucination: bool,
    pub thresholds: HallucinationThresholds,
}

impl HallucinationVerdict {
    pub fn from_scores(original_bleu: f64, perturbed_bleu: f64, thresholds: HallucinationThresholds) -> Self {
        Self {
            original_bleu,
            perturbed_bleu,
            is_hallucination: original_bleu >= thresholds.min_bleu && perturbed_bleu <= thresholds.max_bleu,
            thresholds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HallucinationReport {
    pub verdict: HallucinationVerdict,
    /// Greedy output without the trailing `</s>`.
    pub original: Vec<u32>,
    /// Output generated after the forced `<unk>`, without the trailing `</s>`.
    pub perturbed: Vec<u32>,
}

fn strip_eos(mut ids: Vec<u32>, eos: u32) -> Vec<u32> {
    if ids.last() == Some(&eos) {
        ids.pop();
    }
    ids
}

/// Decodes `source` twice and scores both outputs against `reference`
/// (target tokens without `</s>`).
pub fn detect_hallucination<S: Scalar>(
    model: &Transformer<S>,
    source: &TokenSequence,
    reference: &[u32],
    thresholds: HallucinationThresholds,
    max_len: usize,
) -> Result<HallucinationReport> {
    let config = model.config();
    let unk = config.unk_id.ok_or(Error::MissingUnknownToken)?;
    if unk as usize >= config.vocab_size_tgt {
        return Err(Error::MissingUnknownToken);
    }
    let eos = config.eos_id;
    let original = strip_eos(model.greedy_decode(source, max_len)?.ids, eos);
    let perturbed = strip_eos(model.greedy_decode_with_prefix(source, &[unk], max_len)?, eos);
    let verdict = HallucinationVerdict::from_scores(
        sentence_bleu(&original, reference)?,
        sentence_bleu(&perturbed, reference)?,
        thresholds,
    );
    Ok(HallucinationReport {
        verdict,
        original,
        perturbed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use proptest::prelude::*;

    #[test]
    fn threshold_truth_table() {
        let t = HallucinationThresholds::default();
        assert!(HallucinationVerdict::from_scores(25.0, 2.0, t).is_hallucination);
        assert!(!HallucinationVerdict::from_scores(15.0, 2.0, t).is_hallucination);
        assert!(!HallucinationVerdict::from_scores(25.0, 10.0, t).is_hallucination);
        assert!(HallucinationVerdict::from_scores(20.0, 3.0, t).is_hallucination);
    }

    #[test]
    fn missing_unk_is_an_error() {
        let mut config = ModelConfig::toy(1, 1, 4);
        config.unk_id = None;
        let model = Transformer::<f64>::random(config, 1).unwrap();
        let src = TokenSequence::source(vec![3, 0], 0).unwrap();
        assert!(matches!(
            detect_hallucination(&model, &src, &[3], HallucinationThresholds::default(), 5),
            Err(Error::MissingUnknownToken)
        ));
    }

    #[test]
    fn report_scores_generated_tokens() {
        let model = Transformer::<f64>::random(ModelConfig::toy(1, 2, 4), 3).unwrap();
        let src = TokenSequence::source(vec![4, 7, 0], 0).unwrap();
        let base = model.greedy_decode(&src, 6).unwrap().ids;
        let reference = strip_eos(base.clone(), 0);
        if reference.is_empty() {
            return;
        }
        let report = detect_hallucination(&model, &src, &reference, HallucinationThresholds::default(), 6).unwrap();
        assert_eq!(report.original, reference);
        assert_eq!(report.verdict.original_bleu, 100.0);
    }

    proptest! {
        #[test]
        fn tightening_never_creates_hallucinations(
            orig in 0.0f64..100.0,
            pert in 0.0f64..100.0,
            min_bleu in 0.0f64..100.0,
            max_bleu in 0.0f64..100.0,
            raise in 0.0f64..50.0,
            lower in 0.0f64..50.0,
        ) {
            let loose = HallucinationThresholds { min_bleu, max_bleu };
            let tight = HallucinationThresholds { min_bleu: min_bleu + raise, max_bleu: max_bleu - lower };
            let before = HallucinationVerdict::from_scores(orig, pert, loose).is_hallucination;
            let after = HallucinationVerdict::from_scores(orig, pert, tight).is_hallucination;
            prop_assert!(before || !after);
        }
    }
}
