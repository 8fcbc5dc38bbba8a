//! Rolling layer-wise contributions through the whole network.
//!
//! Contributions are edges of a layered graph whose nodes are token
//! representations; the relevance of an input to an output is the sum over
//! all connecting paths of the product of edge weights, i.e. a chain of
//! matrix products. The MLP mixes no tokens and is treated as an identity
//! edge, so each decoder layer's output is its cross-attention block output.
//!
//! Source relevance follows the decoder recursion
//! `R^1 = C*^1`, `R^l = W^l R^{l-1} + C*^l` with `C*^l = X^l C_enc`, where
//! `X^l` is the cross part and `W^l` the residual-weighted self part of
//! layer `l`. Prefix relevance is `W^L ... W^1`.

use serde::Serialize;

use crate::contributions::{matrix_to_csv, ContributionMatrix, DecoderLayerContributions};
use crate::decomposition::{Attributor, Site};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// `C^L ... C^1` for row-stochastic `J x J` layer matrices given in layer order.
pub fn encoder_rollout(layers: &[Matrix<f64>]) -> Result<Matrix<f64>> {
    let (first, rest) = layers.split_first().ok_or(Error::Empty("encoder layer matrices"))?;
    if first.rows() != first.cols() {
        return Err(Error::Shape(format!(
            "encoder layer matrix must be square, got {}x{}",
            first.rows(),
            first.cols()
        )));
    }
    let mut acc = first.clone();
    for m in rest {
        if m.shape() != first.shape() {
            return Err(Error::Shape(format!(
                "encoder layer matrices differ in shape: {:?} vs {:?}",
                m.shape(),
                first.shape()
            )));
        }
        acc = m.matmul(&acc)?;
    }
    Ok(acc)
}

/// Intermediates of the source recursion at one decoder layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelevanceLayer {
    pub layer: usize,
    /// `C*^l`: cross contributions composed with the encoder rollout (T x J).
    pub source_via_cross: Matrix<f64>,
    /// `R^l`: accumulated source relevance of this layer's output (T x J).
    pub accumulated: Matrix<f64>,
}

fn check_decoder_shapes(layers: &[DecoderLayerContributions]) -> Result<(usize, usize)> {
    let first = layers.first().ok_or(Error::Empty("decoder layer contributions"))?;
    let (t, j) = (first.target_len(), first.source_len());
    for l in layers {
        if l.target_len() != t || l.source_len() != j || l.combined.shape() != (t, j + t) {
            return Err(Error::Shape(format!(
                "decoder layer {} has T={} J={}, expected T={t} J={j}",
                l.layer,
                l.target_len(),
                l.source_len()
            )));
        }
    }
    Ok((t, j))
}

/// Source relevance of every predicted token (T x J) and per-layer intermediates.
pub fn source_relevance(
    encoder_rollout: &Matrix<f64>,
    decoder_layers: &[DecoderLayerContributions],
) -> Result<(Matrix<f64>, Vec<RelevanceLayer>)> {
    let (_, j) = check_decoder_shapes(decoder_layers)?;
    if encoder_rollout.shape() != (j, j) {
        return Err(Error::Shape(format!(
            "encoder rollout is {:?}, decoder expects {j}x{j}",
            encoder_rollout.shape()
        )));
    }
    let via_cross: Vec<Matrix<f64>> = decoder_layers
        .iter()
        .map(|l| l.cross_part.matmul(encoder_rollout))
        .collect::<Result<_>>()?;
    let mut per_layer = Vec::with_capacity(decoder_layers.len());
    let mut acc = via_cross[0].clone();
    per_layer.push(RelevanceLayer {
        layer: decoder_layers[0].layer,
        source_via_cross: via_cross[0].clone(),
        accumulated: acc.clone(),
    });
    for (l, star) in decoder_layers.iter().zip(&via_cross).skip(1) {
        let carried = l.target_part().matmul(&acc)?;
        let data = carried
            .as_slice()
            .iter()
            .zip(star.as_slice())
            .map(|(a, b)| a + b)
            .collect();
        acc = Matrix::from_vec(carried.rows(), carried.cols(), data)?;
        per_layer.push(RelevanceLayer {
            layer: l.layer,
            source_via_cross: star.clone(),
            accumulated: acc.clone(),
        });
    }
    Ok((acc, per_layer))
}

/// Prefix relevance of every predicted token (T x T, lower triangular).
pub fn target_relevance(decoder_layers: &[DecoderLayerContributions]) -> Result<Matrix<f64>> {
    check_decoder_shapes(decoder_layers)?;
    let mut acc = decoder_layers[0].target_part();
    for l in &decoder_layers[1..] {
        acc = l.target_part().matmul(&acc)?;
    }
    Ok(acc)
}

/// Per-step share of relevance owed to the source, and its mean over steps.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SourceContribution {
    pub per_step: Vec<f64>,
    pub mean: f64,
}

/// End-to-end input relevance for every predicted token.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RelevanceResult {
    /// `T x J`: row `p` is the prediction made at prefix position `p`.
    pub source_relevance: Matrix<f64>,
    /// `T x T`: entry `(p, k)` is the relevance of `y_k`; zero for `k > p`.
    pub target_relevance: Matrix<f64>,
    pub per_layer_source: Vec<RelevanceLayer>,
    /// `J x J` rollout over the whole encoder.
    pub encoder_rollout: Matrix<f64>,
}

impl RelevanceResult {
    /// Runs the full aggregation from layer matrices.
    pub fn from_layers(encoder_layers: &[Matrix<f64>], decoder_layers: &[DecoderLayerContributions]) -> Result<Self> {
        let encoder_rollout = encoder_rollout(encoder_layers)?;
        let (source_relevance, per_layer_source) = source_relevance(&encoder_rollout, decoder_layers)?;
        let target_relevance = target_relevance(decoder_layers)?;
        Ok(Self {
            source_relevance,
            target_relevance,
            per_layer_source,
            encoder_rollout,
        })
    }

    pub fn num_predictions(&self) -> usize {
        self.source_relevance.rows()
    }

    /// `sum_j source_relevance[p][j]` per step, and the sentence mean.
    pub fn total_source_contribution(&self) -> SourceContribution {
        let per_step = self.source_relevance.row_sums();
        let mean = if per_step.is_empty() {
            0.0
        } else {
            per_step.iter().sum::<f64>() / per_step.len() as f64
        };
        SourceContribution { per_step, mean }
    }

    /// `[source_relevance | target_relevance]`, one row per predicted token.
    pub fn heatmap(&self) -> Matrix<f64> {
        let (t, j) = self.source_relevance.shape();
        let mut m = Matrix::zeros(t, j + t);
        for r in 0..t {
            m.row_mut(r)[..j].copy_from_slice(self.source_relevance.row(r));
            m.row_mut(r)[j..].copy_from_slice(self.target_relevance.row(r));
        }
        m
    }

    /// Heatmap CSV: rows are predicted tokens, columns are source tokens then
    /// prefix tokens.
    pub fn heatmap_csv(
        &self,
        source_labels: &[String],
        prefix_labels: &[String],
        predicted_labels: &[String],
    ) -> Result<String> {
        let cols: Vec<String> = source_labels.iter().chain(prefix_labels).cloned().collect();
        matrix_to_csv(&self.heatmap(), &cols, Some(predicted_labels))
    }

    /// `{source_tokens, target_tokens, source_relevance, target_relevance}`.
    pub fn to_record<'a>(&'a self, source_tokens: &'a [String], target_tokens: &'a [String]) -> RelevanceRecord<'a> {
        RelevanceRecord {
            source_tokens,
            target_tokens,
            source_relevance: &self.source_relevance,
            target_relevance: &self.target_relevance,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RelevanceRecord<'a> {
    pub source_tokens: &'a [String],
    pub target_tokens: &'a [String],
    pub source_relevance: &'a Matrix<f64>,
    pub target_relevance: &'a Matrix<f64>,
}

/// Contribution of each source token to its own position after some layers.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagonalShare {
    pub layers: usize,
    pub diagonal: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Diagonal of the rollout of layers `1..=up_to_layer`.
pub fn encoder_diagonal_share(layers: &[Matrix<f64>], up_to_layer: usize) -> Result<DiagonalShare> {
    if up_to_layer == 0 || up_to_layer > layers.len() {
        return Err(Error::IndexOutOfRange {
            what: "encoder depth",
            index: up_to_layer,
            len: layers.len(),
        });
    }
    let rolled = encoder_rollout(&layers[..up_to_layer])?;
    let diagonal: Vec<f64> = (0..rolled.rows()).map(|i| rolled.get(i, i)).collect();
    let n = diagonal.len() as f64;
    let mean = diagonal.iter().sum::<f64>() / n;
    let std = (diagonal.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(DiagonalShare {
        layers: up_to_layer,
        diagonal,
        mean,
        std,
    })
}

impl<S: Scalar> Attributor<'_, S> {
    /// Contribution matrices of every encoder layer, in layer order.
    pub fn encoder_matrices(&self) -> Result<Vec<Matrix<f64>>> {
        (0..self.num_encoder_layers())
            .map(|l| self.encoder_layer_matrix(l).map(|m| m.values))
            .collect()
    }

    pub fn decoder_matrices(&self) -> Result<Vec<DecoderLayerContributions>> {
        (0..self.num_decoder_layers())
            .map(|l| self.decoder_layer_matrices(l))
            .collect()
    }

    /// Source and prefix relevance of every predicted token.
    pub fn relevance(&self) -> Result<RelevanceResult> {
        RelevanceResult::from_layers(&self.encoder_matrices()?, &self.decoder_matrices()?)
    }

    /// [`Self::relevance`] plus every block whose rows fell back to uniform.
    pub fn relevance_with_diagnostics(&self) -> Result<(RelevanceResult, Vec<DegenerateRows>)> {
        let mut flagged = Vec::new();
        let mut note = |m: &ContributionMatrix| {
            if !m.degenerate_rows.is_empty() {
                flagged.push(DegenerateRows {
                    site: m.site,
                    layer: m.layer,
                    rows: m.degenerate_rows.clone(),
                });
            }
        };
        let mut encoder = Vec::with_capacity(self.num_encoder_layers());
        for l in 0..self.num_encoder_layers() {
            let m = self.encoder_layer_matrix(l)?;
            note(&m);
            encoder.push(m.values);
        }
        let mut decoder = Vec::with_capacity(self.num_decoder_layers());
        for l in 0..self.num_decoder_layers() {
            let s = self.site_matrix(Site::DecoderSelf, l)?;
            let c = self.site_matrix(Site::DecoderCross, l)?;
            note(&s);
            note(&c);
            decoder.push(DecoderLayerContributions::assemble(l, s.values, &c.values)?);
        }
        Ok((RelevanceResult::from_layers(&encoder, &decoder)?, flagged))
    }
}

/// Rows of one block's contribution matrix that hit the uniform fallback.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DegenerateRows {
    pub site: Site,
    /// 0-based layer index.
    pub layer: usize,
    pub rows: Vec<usize>,
}
