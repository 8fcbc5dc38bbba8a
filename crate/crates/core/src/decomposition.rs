//! Attention blocks rewritten as sums of per-token transformed vectors.
//!
//! A post-LN block computes `LN(sum_j F_i(x_j) + b + r_i)` where `F_i(x_j)` is
//! the head-summed, attention-weighted, output-projected value of token `j`,
//! `b = W_O b_V + b_O` collects the biases, and `r_i` is the residual. Layer
//! normalization is linear once its standard deviation is fixed, so with the
//! deviation taken from the trace the block output splits exactly into
//! `sum_j T_i(x_j) + eps`, where
//!
//! * `T_i(x_j) = L(F_i(x_j))` for ordinary contributors,
//! * the residual is folded into a single designated contributor,
//! * `L(u) = gamma * (u - mean(u)) / sigma` and `eps = L(b) + beta`.
//!
//! Attention probabilities are read from the trace rather than recomputed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::forward::ln_statistics;
use crate::model::trace::{AttentionWeights, ForwardTrace};
use crate::model::weights::{AttentionParams, LayerNormParams};
use crate::model::Transformer;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// The three attention sites of an encoder-decoder layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Site {
    EncoderSelf,
    DecoderSelf,
    DecoderCross,
}

impl Site {
    pub fn as_str(self) -> &'static str {
        match self {
            Site::EncoderSelf => "encoder-self",
            Site::DecoderSelf => "decoder-self",
            Site::DecoderCross => "decoder-cross",
        }
    }
}

impl std::fmt::Display for Site {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Decomposition of one block output into contributor terms.
///
/// Contributors are indexed by input position. For the cross site there are
/// `J` encoder contributors followed by one residual contributor (index `J`)
/// standing for the self-attention block output.
#[derive(Clone, Debug, PartialEq)]
pub struct TransformedVectorSet<S> {
    pub site: Site,
    pub layer: usize,
    pub position: usize,
    /// `T(.)` per contributor.
    pub transformed: Vec<Vec<S>>,
    /// `F(.)` per attended token, before LN and without residual.
    pub mixed: Vec<Vec<S>>,
    /// Contributor that carries the residual term.
    pub residual_index: usize,
    /// `L(W_O b_V + b_O) + beta`.
    pub epsilon: Vec<S>,
    pub block_output: Vec<S>,
}

impl<S: Scalar> TransformedVectorSet<S> {
    pub fn len(&self) -> usize {
        self.transformed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transformed.is_empty()
    }

    /// `sum_j T(.) + eps`.
    pub fn reconstruct(&self) -> Vec<f64> {
        let mut acc: Vec<f64> = self.epsilon.iter().map(|v| v.to_f64()).collect();
        for t in &self.transformed {
            for (a, v) in acc.iter_mut().zip(t) {
                *a += v.to_f64();
            }
        }
        acc
    }

    /// Infinity-norm gap between the block output and its reconstruction.
    pub fn reconstruction_error(&self) -> f64 {
        self.reconstruct()
            .iter()
            .zip(&self.block_output)
            .map(|(r, o)| (r - o.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// `gamma * (u - mean(u)) / std`, in `f64`.
fn linearize_one<S: Scalar>(u: &[f64], gamma: &[S], std: f64) -> Vec<f64> {
    let mean = u.iter().sum::<f64>() / u.len() as f64;
    u.iter()
        .zip(gamma)
        .map(|(v, g)| g.to_f64() * (v - mean) / std)
        .collect()
}

/// Linear split of layer normalization over a sum of components.
///
/// Returns `L(u_j)` for every component and `beta`, so that
/// `sum_j L(u_j) + beta = layer_norm(sum_j u_j)`. The shared deviation is
/// computed from the full sum.
pub fn ln_linearize<S: Scalar>(
    components: &[Vec<S>],
    gamma: &[S],
    beta: &[S],
    eps: f64,
) -> Result<(Vec<Vec<S>>, Vec<S>)> {
    let d = gamma.len();
    if components.is_empty() {
        return Err(Error::Empty("ln_linearize components"));
    }
    if beta.len() != d {
        return Err(Error::LengthMismatch {
            context: "ln_linearize beta".into(),
            expected: d,
            found: beta.len(),
        });
    }
    let mut sum = vec![0.0f64; d];
    for (j, u) in components.iter().enumerate() {
        if u.len() != d {
            return Err(Error::LengthMismatch {
                context: format!("ln_linearize component {j}"),
                expected: d,
                found: u.len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(u) {
            *s += v.to_f64();
        }
    }
    let (_, std) = ln_statistics(&sum, eps);
    if std == 0.0 {
        return Err(Error::ZeroStd);
    }
    Ok((ln_linearize_with_std(components, gamma, std), beta.to_vec()))
}

/// [`ln_linearize`] with a given deviation, e.g. the one stored in a trace.
pub fn ln_linearize_with_std<S: Scalar>(components: &[Vec<S>], gamma: &[S], std: f64) -> Vec<Vec<S>> {
    components
        .iter()
        .map(|u| {
            let u: Vec<f64> = u.iter().map(|v| v.to_f64()).collect();
            linearize_one(&u, gamma, std).into_iter().map(S::from_f64).collect()
        })
        .collect()
}

/// Everything needed to decompose any position of one (site, layer).
struct BlockReplay<'a, S> {
    site: Site,
    layer: usize,
    params: &'a AttentionParams<S>,
    ln: &'a LayerNormParams<S>,
    attn: &'a AttentionWeights<S>,
    std: &'a [f64],
    /// Residual stream at each query position.
    residual: &'a Matrix<S>,
    block_output: &'a Matrix<S>,
    /// `W_V x_j` without bias, per attended token.
    values: Matrix<f64>,
    /// `L(W_O b_V + b_O) + beta` needs the per-position deviation, so keep `b`.
    bias: Vec<f64>,
    head_dim: usize,
    causal: bool,
}

impl<S: Scalar> BlockReplay<'_, S> {
    fn queries(&self) -> usize {
        self.block_output.rows()
    }

    /// `F_i(x_j) = sum_h W_O^h alpha_ij^h W_V^h x_j`.
    fn mixed(&self, i: usize, j: usize) -> Vec<f64> {
        let d = self.values.cols();
        let mut weighted = vec![0.0f64; d];
        for h in 0..self.attn.num_heads() {
            let a = self.attn.get(h, i, j).to_f64();
            for c in h * self.head_dim..(h + 1) * self.head_dim {
                weighted[c] = a * self.values.get(j, c);
            }
        }
        let w_o = &self.params.output.weight;
        (0..d)
            .map(|r| w_o.row(r).iter().zip(&weighted).map(|(w, x)| w.to_f64() * x).sum())
            .collect()
    }

    fn decompose(&self, i: usize) -> Result<TransformedVectorSet<S>> {
        if i >= self.queries() {
            return Err(Error::IndexOutOfRange {
                what: "query position",
                index: i,
                len: self.queries(),
            });
        }
        let attended = if self.causal { i + 1 } else { self.values.rows() };
        let std = self.std[i];
        let gamma = &self.ln.gamma;
        let mixed: Vec<Vec<f64>> = (0..attended).map(|j| self.mixed(i, j)).collect();
        let residual: Vec<f64> = self.residual.row(i).iter().map(|v| v.to_f64()).collect();

        let (mut components, residual_index) = match self.site {
            Site::EncoderSelf | Site::DecoderSelf => (mixed.clone(), i),
            Site::DecoderCross => {
                let mut c = mixed.clone();
                c.push(vec![0.0; residual.len()]);
                (c, attended)
            }
        };
        for (c, r) in components[residual_index].iter_mut().zip(&residual) {
            *c += r;
        }

        let to_s = |v: Vec<f64>| -> Vec<S> { v.into_iter().map(S::from_f64).collect() };
        let transformed = components.iter().map(|u| to_s(linearize_one(u, gamma, std))).collect();
        let epsilon = linearize_one(&self.bias, gamma, std)
            .into_iter()
            .zip(&self.ln.beta)
            .map(|(v, b)| S::from_f64(v + b.to_f64()))
            .collect();
        Ok(TransformedVectorSet {
            site: self.site,
            layer: self.layer,
            position: i,
            transformed,
            mixed: mixed.into_iter().map(to_s).collect(),
            residual_index,
            epsilon,
            block_output: self.block_output.row(i).to_vec(),
        })
    }
}

/// Replays attention blocks of one traced forward pass.
///
/// The trace must come from `model` (or from a model whose attention
/// probabilities and LN statistics are meant to be reused).
#[derive(Clone, Copy)]
pub struct Attributor<'a, S> {
    pub(crate) model: &'a Transformer<S>,
    pub(crate) trace: &'a ForwardTrace<S>,
}

impl<'a, S: Scalar> Attributor<'a, S> {
    pub fn new(model: &'a Transformer<S>, trace: &'a ForwardTrace<S>) -> Self {
        Self { model, trace }
    }

    pub fn model(&self) -> &'a Transformer<S> {
        self.model
    }

    pub fn trace(&self) -> &'a ForwardTrace<S> {
        self.trace
    }

    pub fn num_encoder_layers(&self) -> usize {
        self.trace.encoder.len()
    }

    pub fn num_decoder_layers(&self) -> usize {
        self.trace.decoder.len()
    }

    pub(crate) fn check_layer(&self, site: Site, layer: usize) -> Result<()> {
        let len = match site {
            Site::EncoderSelf => self.num_encoder_layers(),
            Site::DecoderSelf | Site::DecoderCross => self.num_decoder_layers(),
        };
        if layer >= len {
            return Err(Error::IndexOutOfRange {
                what: "layer",
                index: layer,
                len,
            });
        }
        Ok(())
    }

    fn replay(&self, site: Site, layer: usize) -> Result<BlockReplay<'a, S>> {
        self.check_layer(site, layer)?;
        let cfg = self.model.config();
        let w = self.model.weights();
        let (params, ln, attn, std, residual, block_output, memory, causal) = match site {
            Site::EncoderSelf => {
                let t = &self.trace.encoder[layer];
                let p = &w.encoder[layer];
                (
                    &p.self_attn,
                    &p.self_ln,
                    &t.self_attn,
                    &t.self_ln.std,
                    &t.input,
                    &t.self_out,
                    &t.input,
                    false,
                )
            }
            Site::DecoderSelf => {
                let t = &self.trace.decoder[layer];
                let p = &w.decoder[layer];
                (
                    &p.self_attn,
                    &p.self_ln,
                    &t.self_attn,
                    &t.self_ln.std,
                    &t.input,
                    &t.self_out,
                    &t.input,
                    true,
                )
            }
            Site::DecoderCross => {
                let t = &self.trace.decoder[layer];
                let p = &w.decoder[layer];
                (
                    &p.cross_attn,
                    &p.cross_ln,
                    &t.cross_attn,
                    &t.cross_ln.std,
                    &t.self_out,
                    &t.cross_out,
                    &self.trace.encoder_output,
                    false,
                )
            }
        };
        let w_v = &params.value.weight;
        let mut values = Matrix::zeros(memory.rows(), cfg.model_dim);
        for j in 0..memory.rows() {
            for (c, v) in w_v.matvec(memory.row(j)).into_iter().enumerate() {
                values.set(j, c, v.to_f64());
            }
        }
        // W_O b_V + b_O: the value bias passes through attention unchanged
        // because every attention row sums to one.
        let w_o = &params.output.weight;
        let bias = (0..cfg.model_dim)
            .map(|r| {
                let through: f64 = w_o
                    .row(r)
                    .iter()
                    .zip(&params.value.bias)
                    .map(|(a, b)| a.to_f64() * b.to_f64())
                    .sum();
                through + params.output.bias[r].to_f64()
            })
            .collect();
        Ok(BlockReplay {
            site,
            layer,
            params,
            ln,
            attn,
            std,
            residual,
            block_output,
            values,
            bias,
            head_dim: cfg.head_dim,
            causal,
        })
    }

    /// Transformed vectors of every position at one site and layer.
    pub fn transformed_vectors_all(&self, site: Site, layer: usize) -> Result<Vec<TransformedVectorSet<S>>> {
        let replay = self.replay(site, layer)?;
        (0..replay.queries()).map(|i| replay.decompose(i)).collect()
    }

    pub fn transformed_vectors(&self, site: Site, layer: usize, position: usize) -> Result<TransformedVectorSet<S>> {
        self.replay(site, layer)?.decompose(position)
    }

    /// Encoder self-attention at position `i`; contributor `i` carries `x_i`.
    pub fn encoder_transformed_vectors(&self, layer: usize, i: usize) -> Result<TransformedVectorSet<S>> {
        self.transformed_vectors(Site::EncoderSelf, layer, i)
    }

    /// Decoder self-attention at prefix position `p` (predicting `y_{p+1}`):
    /// contributors `y_0 ..= y_p`, residual on `y_p`.
    pub fn decoder_self_transformed_vectors(&self, layer: usize, p: usize) -> Result<TransformedVectorSet<S>> {
        self.transformed_vectors(Site::DecoderSelf, layer, p)
    }

    /// Cross-attention at prefix position `p`: `J` encoder outputs plus the
    /// self-attention block output as residual contributor.
    pub fn cross_transformed_vectors(&self, layer: usize, p: usize) -> Result<TransformedVectorSet<S>> {
        self.transformed_vectors(Site::DecoderCross, layer, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward::layer_norm;

    #[test]
    fn single_component_collapses_to_layer_norm() {
        let u = vec![vec![0.4f64, -1.0, 2.0, 0.1]];
        let g = [1.2, 0.7, -0.3, 1.0];
        let b = [0.1, 0.0, -0.2, 0.3];
        let (l, beta) = ln_linearize(&u, &g, &b, 1e-5).unwrap();
        let direct = layer_norm(&u[0], &g, &b, 1e-5).unwrap();
        for k in 0..4 {
            assert!((l[0][k] + beta[k] - direct[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn opposite_components_cancel() {
        let u = vec![0.5f64, -0.25, 1.5];
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        let g = [1.0, 2.0, 0.5];
        let b = [0.3, -0.1, 0.0];
        let (l, beta) = ln_linearize(&[u, neg], &g, &b, 1e-5).unwrap();
        for k in 0..3 {
            assert_eq!(l[0][k], -l[1][k]);
        }
        let zero = layer_norm(&[0.0f64; 3], &g, &b, 1e-5).unwrap();
        for k in 0..3 {
            assert!((l[0][k] + l[1][k] + beta[k] - zero[k]).abs() < 1e-15);
        }
    }

    #[test]
    fn ln_linearize_errors() {
        let g = [1.0f64, 1.0];
        assert!(matches!(
            ln_linearize(&[vec![1.0, 2.0, 3.0]], &g, &g, 1e-5),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            ln_linearize(&[vec![1.0, 1.0]], &g, &g, 0.0),
            Err(Error::ZeroStd)
        ));
    }
}
