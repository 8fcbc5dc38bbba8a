//! Alignment error rate, sentence BLEU, hallucination detection and
//! correlation diagnostics.

pub mod alignment;
pub mod bleu;
pub mod correlation;
pub mod hallucination;

pub use alignment::{aer, corpus_aer, extract_alignments, parse_gold_alignments, AlignmentSet, CorpusAer, WordPair};
pub use bleu::sentence_bleu;
pub use correlation::{
    eos_residual_correlation, eos_residual_correlation_all_layers, eos_residual_points, pearson,
    EosResidualCorrelation, EosResidualPoint,
};
pub use hallucination::{detect_hallucination, HallucinationReport, HallucinationThresholds, HallucinationVerdict};
