//! Post-LN encoder-decoder forward pass with trace capture, and greedy decoding.

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::trace::{AttentionWeights, DecoderLayerTrace, EncoderLayerTrace, ForwardTrace, LnTrace};
use crate::model::weights::{AttentionParams, FeedForwardParams, LayerNormParams, TransformerWeights};
use crate::scalar::{dot, Scalar};
use crate::tensor::Matrix;
use crate::tokens::{SequenceRole, TokenSequence};

/// Mean and `sqrt(population variance + eps)` of `x`, in `f64`.
pub fn ln_statistics<S: Scalar>(x: &[S], eps: f64) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().map(|v| v.to_f64()).sum::<f64>() / n;
    let var = x
        .iter()
        .map(|v| {
            let c = v.to_f64() - mean;
            c * c
        })
        .sum::<f64>()
        / n;
    (mean, (var + eps).sqrt())
}

/// `(x - mean) / std * gamma + beta` with precomputed statistics.
pub(crate) fn normalize_with<S: Scalar>(x: &[S], mean: f64, std: f64, gamma: &[S], beta: &[S]) -> Vec<S> {
    x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(&v, (&g, &b))| S::from_f64((v.to_f64() - mean) / std * g.to_f64() + b.to_f64()))
        .collect()
}

/// Layer normalization, `(x - mu(x)) / sigma(x) * gamma + beta` with
/// `sigma = sqrt(var + eps)`.
pub fn layer_norm<S: Scalar>(x: &[S], gamma: &[S], beta: &[S], eps: f64) -> Result<Vec<S>> {
    if x.is_empty() {
        return Err(Error::Empty("layer_norm input"));
    }
    for (what, v) in [("gamma", gamma.len()), ("beta", beta.len())] {
        if v != x.len() {
            return Err(Error::LengthMismatch {
                context: format!("layer_norm {what}"),
                expected: x.len(),
                found: v,
            });
        }
    }
    let (mean, std) = ln_statistics(x, eps);
    if std == 0.0 {
        return Err(Error::ZeroStd);
    }
    Ok(normalize_with(x, mean, std, gamma, beta))
}

/// Index of the largest value; ties go to the lower index.
pub fn argmax<S: Scalar>(row: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Sinusoidal encoding: `sin(p / 10000^(2k/d))` at `2k`, `cos` at `2k+1`.
pub fn sinusoidal_position(pos: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let k = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * k / dim as f64);
            if i % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

fn layer_norm_rows<S: Scalar>(x: &Matrix<S>, ln: &LayerNormParams<S>, eps: f64) -> (Matrix<S>, LnTrace) {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut stats = LnTrace::default();
    for r in 0..x.rows() {
        let (mean, std) = ln_statistics(x.row(r), eps);
        out.row_mut(r)
            .copy_from_slice(&normalize_with(x.row(r), mean, std, &ln.gamma, &ln.beta));
        stats.mean.push(mean);
        stats.std.push(std);
    }
    (out, stats)
}

fn add_rows<S: Scalar>(a: &Matrix<S>, b: &Matrix<S>) -> Matrix<S> {
    let data = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| S::from_f64(x.to_f64() + y.to_f64()))
        .collect();
    Matrix::from_vec(a.rows(), a.cols(), data).expect("same shape")
}

/// Multi-head attention of `queries` over `memory`.
///
/// Returns `MHA_i` for every query (including `b_O`) and the per-head
/// probabilities. With `causal`, query `i` sees keys `0..=i` and masked
/// entries are exactly zero.
fn multi_head_attention<S: Scalar>(
    params: &AttentionParams<S>,
    queries: &Matrix<S>,
    memory: &Matrix<S>,
    num_heads: usize,
    causal: bool,
) -> (Matrix<S>, AttentionWeights<S>) {
    let q = params.query.forward_rows(queries);
    let k = params.key.forward_rows(memory);
    let v = params.value.forward_rows(memory);
    let d = queries.cols();
    let dh = d / num_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (nq, nk) = (queries.rows(), memory.rows());

    let mut heads = Vec::with_capacity(num_heads);
    let mut concat = Matrix::<S>::zeros(nq, d);
    for h in 0..num_heads {
        let cols = h * dh..(h + 1) * dh;
        let mut probs = Matrix::<S>::zeros(nq, nk);
        for i in 0..nq {
            let visible = if causal { i + 1 } else { nk };
            let scores: Vec<f64> = (0..visible)
                .map(|j| dot(&q.row(i)[cols.clone()], &k.row(j)[cols.clone()]) * scale)
                .collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                probs.set(i, j, S::from_f64(e / z));
            }
            for c in cols.clone() {
                let acc: f64 = (0..visible)
                    .map(|j| probs.get(i, j).to_f64() * v.get(j, c).to_f64())
                    .sum();
                concat.set(i, c, S::from_f64(acc));
            }
        }
        heads.push(probs);
    }
    (params.output.forward_rows(&concat), AttentionWeights { heads })
}

fn feed_forward<S: Scalar>(params: &FeedForwardParams<S>, x: &Matrix<S>) -> Matrix<S> {
    let rows: Vec<Vec<S>> = (0..x.rows())
        .map(|r| {
            let hidden: Vec<S> = params
                .fc1
                .forward(x.row(r))
                .into_iter()
                .map(|v| if v > S::zero() { v } else { S::zero() })
                .collect();
            params.fc2.forward(&hidden)
        })
        .collect();
    Matrix::from_rows(&rows).expect("uniform rows")
}

/// A post-LN encoder-decoder Transformer. Immutable after construction.
#[derive(Clone, Debug)]
pub struct Transformer<S> {
    config: ModelConfig,
    weights: TransformerWeights<S>,
}

impl<S: Scalar> Transformer<S> {
    pub fn new(config: ModelConfig, weights: TransformerWeights<S>) -> Result<Self> {
        config.validate()?;
        weights.validate(&config)?;
        Ok(Self { config, weights })
    }

    /// Randomly initialised model, deterministic in `seed`.
    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        let weights = TransformerWeights::random(&config, seed)?;
        Self::new(config, weights)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let (config, weights) = crate::model::format::load_model(path)?;
        Self::new(config, weights)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &TransformerWeights<S> {
        &self.weights
    }

    pub fn cast<T: Scalar>(&self) -> Result<Transformer<T>> {
        Transformer::new(self.config.clone(), self.weights.cast(&self.config)?)
    }

    fn check_ids(&self, seq: &TokenSequence) -> Result<()> {
        let (vocab, role) = match seq.role {
            SequenceRole::Source => (self.config.vocab_size_src, "source"),
            SequenceRole::TargetPrefix => (self.config.vocab_size_tgt, "target"),
        };
        if seq.is_empty() {
            return Err(Error::InvalidSequence(format!("empty {role} sequence")));
        }
        if seq.len() > self.config.max_positions {
            return Err(Error::SequenceTooLong {
                role,
                len: seq.len(),
                max: self.config.max_positions,
            });
        }
        if let Some(&id) = seq.ids.iter().find(|&&id| id as usize >= vocab) {
            return Err(Error::TokenOutOfRange { id, role, vocab });
        }
        let eos = self.config.eos_id;
        match seq.role {
            SequenceRole::Source if seq.ids.last() != Some(&eos) => {
                Err(Error::InvalidSequence("source must end with </s>".into()))
            }
            SequenceRole::TargetPrefix if seq.ids[0] != eos => {
                Err(Error::InvalidSequence("target prefix must start with </s>".into()))
            }
            _ => Ok(()),
        }
    }

    /// `sqrt(d) * E[id] + position(p)` for every token.
    fn embed(&self, ids: &[u32], table: &Matrix<S>, learned: Option<&Matrix<S>>) -> Matrix<S> {
        let d = self.config.model_dim;
        let scale = (d as f64).sqrt();
        let mut out = Matrix::zeros(ids.len(), d);
        for (p, &id) in ids.iter().enumerate() {
            let pos: Vec<f64> = match learned {
                Some(t) => t.row(p).iter().map(|v| v.to_f64()).collect(),
                None => sinusoidal_position(p, d),
            };
            let emb = table.row(id as usize);
            for c in 0..d {
                out.set(p, c, S::from_f64(scale * emb[c].to_f64() + pos[c]));
            }
        }
        out
    }

    /// Runs the encoder, returning per-layer traces and the outputs `e`.
    pub fn encode(&self, source: &TokenSequence) -> Result<(Vec<EncoderLayerTrace<S>>, Matrix<S>)> {
        if source.role != SequenceRole::Source {
            return Err(Error::InvalidSequence("expected a source sequence".into()));
        }
        self.check_ids(source)?;
        let eps = self.config.ln_epsilon;
        let h = self.config.num_heads;
        let mut x = self.embed(&source.ids, &self.weights.src_embed, self.weights.src_pos.as_ref());
        let mut layers = Vec::with_capacity(self.weights.encoder.len());
        for p in &self.weights.encoder {
            let (mha, self_attn) = multi_head_attention(&p.self_attn, &x, &x, h, false);
            let self_sum = add_rows(&mha, &x);
            let (self_out, self_ln) = layer_norm_rows(&self_sum, &p.self_ln, eps);
            let ffn_out = feed_forward(&p.ffn, &self_out);
            let (output, ffn_ln) = layer_norm_rows(&add_rows(&ffn_out, &self_out), &p.ffn_ln, eps);
            layers.push(EncoderLayerTrace {
                input: x,
                self_attn,
                self_sum,
                self_ln,
                self_out,
                ffn_out,
                ffn_ln,
                output: output.clone(),
            });
            x = output;
        }
        Ok((layers, x))
    }

    /// Teacher-forced forward pass over the whole prefix.
    ///
    /// Row `p` of the returned logits scores the prediction of `y_{p+1}`
    /// given `x` and `y_0 ..= y_p`.
    pub fn forward_with_trace(
        &self,
        source: &TokenSequence,
        target_prefix: &TokenSequence,
    ) -> Result<(Matrix<S>, ForwardTrace<S>)> {
        let (encoder, encoder_output) = self.encode(source)?;
        if target_prefix.role != SequenceRole::TargetPrefix {
            return Err(Error::InvalidSequence("expected a target prefix".into()));
        }
        self.check_ids(target_prefix)?;
        let eps = self.config.ln_epsilon;
        let h = self.config.num_heads;
        let mut y = self.embed(
            &target_prefix.ids,
            &self.weights.tgt_embed,
            self.weights.tgt_pos.as_ref(),
        );
        let mut decoder = Vec::with_capacity(self.weights.decoder.len());
        for p in &self.weights.decoder {
            let (mha, self_attn) = multi_head_attention(&p.self_attn, &y, &y, h, true);
            let self_sum = add_rows(&mha, &y);
            let (self_out, self_ln) = layer_norm_rows(&self_sum, &p.self_ln, eps);
            let (cross, cross_attn) = multi_head_attention(&p.cross_attn, &self_out, &encoder_output, h, false);
            let cross_sum = add_rows(&cross, &self_out);
            let (cross_out, cross_ln) = layer_norm_rows(&cross_sum, &p.cross_ln, eps);
            let ffn_out = feed_forward(&p.ffn, &cross_out);
            let (output, ffn_ln) = layer_norm_rows(&add_rows(&ffn_out, &cross_out), &p.ffn_ln, eps);
            decoder.push(DecoderLayerTrace {
                input: y,
                self_attn,
                self_sum,
                self_ln,
                self_out,
                cross_attn,
                cross_sum,
                cross_ln,
                cross_out,
                ffn_out,
                ffn_ln,
                output: output.clone(),
            });
            y = output;
        }
        let logits = self.weights.output.forward_rows(&y);
        let trace = ForwardTrace {
            source_ids: source.ids.clone(),
            target_ids: target_prefix.ids.clone(),
            encoder,
            encoder_output,
            decoder,
            logits: logits.clone(),
        };
        Ok((logits, trace))
    }

    /// Greedy decoding from `</s>`; see [`Self::greedy_decode_with_prefix`].
    pub fn greedy_decode(&self, source: &TokenSequence, max_len: usize) -> Result<TokenSequence> {
        let ids = self.greedy_decode_with_prefix(source, &[], max_len)?;
        Ok(TokenSequence {
            ids,
            role: SequenceRole::TargetPrefix,
            words: None,
        })
    }

    /// Greedy decoding after the forced tokens `</s> forced..`.
    ///
    /// Appends the argmax token (lowest index on ties) until `</s>` is produced
    /// or `max_len` tokens have been generated. Returns the generated tokens
    /// `y_1 .. y_n` only, including a final `</s>` if one was produced.
    pub fn greedy_decode_with_prefix(
        &self,
        source: &TokenSequence,
        forced: &[u32],
        max_len: usize,
    ) -> Result<Vec<u32>> {
        if max_len == 0 {
            return Err(Error::ZeroMaxLen);
        }
        let eos = self.config.eos_id;
        let mut prefix = Vec::with_capacity(1 + forced.len() + max_len);
        prefix.push(eos);
        prefix.extend_from_slice(forced);
        let mut generated = Vec::new();
        while generated.len() < max_len {
            let seq = TokenSequence::target_prefix(prefix.clone(), eos)?;
            let (logits, _) = self.forward_with_trace(source, &seq)?;
            let next = argmax(logits.row(logits.rows() - 1)) as u32;
            generated.push(next);
            if next == eos || prefix.len() == self.config.max_positions {
                break;
            }
            prefix.push(next);
        }
        Ok(generated)
    }
}
