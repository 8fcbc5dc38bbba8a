//! Intermediate quantities recorded by a teacher-forced forward pass.

use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Attention probabilities, one `queries x keys` matrix per head.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<S> {
    pub heads: Vec<Matrix<S>>,
}

impl<S: Scalar> AttentionWeights<S> {
    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn queries(&self) -> usize {
        self.heads[0].rows()
    }

    pub fn keys(&self) -> usize {
        self.heads[0].cols()
    }

    #[inline]
    pub fn get(&self, head: usize, query: usize, key: usize) -> S {
        self.heads[head].get(query, key)
    }

    /// Unweighted mean over heads.
    pub fn mean_over_heads(&self) -> Matrix<f64> {
        let (q, k) = self.heads[0].shape();
        let h = self.heads.len() as f64;
        let mut out = Matrix::zeros(q, k);
        for i in 0..q {
            for j in 0..k {
                let s: f64 = self.heads.iter().map(|m| m.get(i, j).to_f64()).sum();
                out.set(i, j, s / h);
            }
        }
        out
    }
}

/// Per-position mean and standard deviation used by a layer normalization.
/// `std` already includes epsilon: `sqrt(var + eps)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LnTrace {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerTrace<S> {
    /// Layer input `x` (J x d).
    pub input: Matrix<S>,
    pub self_attn: AttentionWeights<S>,
    /// `MHA(x) + x`, the argument of the self-attention LN.
    pub self_sum: Matrix<S>,
    pub self_ln: LnTrace,
    /// Self-attention block output `x~`.
    pub self_out: Matrix<S>,
    pub ffn_out: Matrix<S>,
    pub ffn_ln: LnTrace,
    /// Layer output after the MLP and its LN.
    pub output: Matrix<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayerTrace<S> {
    /// Prefix representations entering the layer (T x d).
    pub input: Matrix<S>,
    /// Causal self-attention (T x T per head).
    pub self_attn: AttentionWeights<S>,
    pub self_sum: Matrix<S>,
    pub self_ln: LnTrace,
    /// Self-attention block output `y~^s`.
    pub self_out: Matrix<S>,
    /// Cross-attention over encoder outputs (T x J per head).
    pub cross_attn: AttentionWeights<S>,
    pub cross_sum: Matrix<S>,
    pub cross_ln: LnTrace,
    /// Cross-attention block output `y~`.
    pub cross_out: Matrix<S>,
    pub ffn_out: Matrix<S>,
    pub ffn_ln: LnTrace,
    pub output: Matrix<S>,
}

/// Everything needed to replay any attention block of one forward pass.
///
/// Decoder rows are prefix positions: row `p` holds the representation of
/// `y_p` and (at the last layer) the logits for predicting `y_{p+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<S> {
    pub source_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub encoder: Vec<EncoderLayerTrace<S>>,
    /// Encoder outputs `e` (J x d).
    pub encoder_output: Matrix<S>,
    pub decoder: Vec<DecoderLayerTrace<S>>,
    /// One row per prefix position (T x vocab_size_tgt).
    pub logits: Matrix<S>,
}

impl<S: Scalar> ForwardTrace<S> {
    pub fn source_len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn target_len(&self) -> usize {
        self.target_ids.len()
    }
}
