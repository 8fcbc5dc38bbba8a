//! Learned parameters and the canonical tensor naming grammar.
//!
//! ```text
//! src.embed                       [vocab_size_src, d]
//! tgt.embed                       [vocab_size_tgt, d]
//! src.pos, tgt.pos                [max_positions, d]     (learned positions only)
//! enc.{l}.self.{Wq,Wk,Wv,Wo}      [d, d]
//! enc.{l}.self.{bq,bk,bv,bo}      [d]
//! enc.{l}.self_ln.{gamma,beta}    [d]
//! enc.{l}.ffn.W1 [ffn, d]  enc.{l}.ffn.b1 [ffn]
//! enc.{l}.ffn.W2 [d, ffn]  enc.{l}.ffn.b2 [d]
//! enc.{l}.ffn_ln.{gamma,beta}     [d]
//! dec.{l}.self.*, dec.{l}.self_ln.*, dec.{l}.cross.*, dec.{l}.cross_ln.*,
//! dec.{l}.ffn.*, dec.{l}.ffn_ln.*  (same shapes as the encoder)
//! out.W [vocab_size_tgt, d]  out.b [vocab_size_tgt]
//! ```
//!
//! Layers are numbered from 0. Matrices are `[out, in]`, applied as `W x + b`.
//! Heads own consecutive `head_dim` slices: rows of `Wq/Wk/Wv`, columns of `Wo`.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, Positional};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<S> {
    pub weight: Matrix<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Linear<S> {
    pub fn forward(&self, x: &[S]) -> Vec<S> {
        let mut y = self.weight.matvec(x);
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v = S::from_f64(v.to_f64() + b.to_f64());
        }
        y
    }

    /// Applies the layer to every row of `x`.
    pub fn forward_rows(&self, x: &Matrix<S>) -> Matrix<S> {
        let rows: Vec<Vec<S>> = (0..x.rows()).map(|r| self.forward(x.row(r))).collect();
        Matrix::from_rows(&rows).expect("uniform row length")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams<S> {
    pub gamma: Vec<S>,
    pub beta: Vec<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<S> {
    pub query: Linear<S>,
    pub key: Linear<S>,
    pub value: Linear<S>,
    pub output: Linear<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForwardParams<S> {
    pub fc1: Linear<S>,
    pub fc2: Linear<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayerParams<S> {
    pub self_attn: AttentionParams<S>,
    pub self_ln: LayerNormParams<S>,
    pub ffn: FeedForwardParams<S>,
    pub ffn_ln: LayerNormParams<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayerParams<S> {
    pub self_attn: AttentionParams<S>,
    pub self_ln: LayerNormParams<S>,
    pub cross_attn: AttentionParams<S>,
    pub cross_ln: LayerNormParams<S>,
    pub ffn: FeedForwardParams<S>,
    pub ffn_ln: LayerNormParams<S>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TransformerWeights<S> {
    pub src_embed: Matrix<S>,
    pub tgt_embed: Matrix<S>,
    pub src_pos: Option<Matrix<S>>,
    pub tgt_pos: Option<Matrix<S>>,
    pub encoder: Vec<EncoderLayerParams<S>>,
    pub decoder: Vec<DecoderLayerParams<S>>,
    pub output: Linear<S>,
}

/// Name and shape of one required tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Pulls tensors in canonical order from a caller-supplied source.
struct Builder<F> {
    fetch: F,
}

impl<S: Scalar, F: FnMut(&TensorSpec) -> Result<Vec<S>>> Builder<F> {
    fn take(&mut self, name: String, shape: Vec<usize>) -> Result<Vec<S>> {
        let spec = TensorSpec { name, shape };
        let data = (self.fetch)(&spec)?;
        if data.len() != spec.numel() {
            return Err(Error::ShapeMismatch {
                name: spec.name,
                expected: spec.shape,
                found: vec![data.len()],
            });
        }
        Ok(data)
    }

    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> Result<Matrix<S>> {
        let data = self.take(name, vec![rows, cols])?;
        Matrix::from_vec(rows, cols, data)
    }

    fn linear(&mut self, prefix: &str, w: &str, b: &str, out: usize, inp: usize) -> Result<Linear<S>> {
        Ok(Linear {
            weight: self.matrix(format!("{prefix}.{w}"), out, inp)?,
            bias: self.take(format!("{prefix}.{b}"), vec![out])?,
        })
    }

    fn attention(&mut self, prefix: &str, d: usize) -> Result<AttentionParams<S>> {
        Ok(AttentionParams {
            query: self.linear(prefix, "Wq", "bq", d, d)?,
            key: self.linear(prefix, "Wk", "bk", d, d)?,
            value: self.linear(prefix, "Wv", "bv", d, d)?,
            output: self.linear(prefix, "Wo", "bo", d, d)?,
        })
    }

    fn layer_norm(&mut self, prefix: &str, d: usize) -> Result<LayerNormParams<S>> {
        Ok(LayerNormParams {
            gamma: self.take(format!("{prefix}.gamma"), vec![d])?,
            beta: self.take(format!("{prefix}.beta"), vec![d])?,
        })
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> Result<FeedForwardParams<S>> {
        Ok(FeedForwardParams {
            fc1: self.linear(prefix, "W1", "b1", f, d)?,
            fc2: self.linear(prefix, "W2", "b2", d, f)?,
        })
    }
}

/// Appends `(name, shape, data)` in canonical order.
struct Lister<'a, S> {
    out: Vec<(String, Vec<usize>, &'a [S])>,
}

impl<'a, S: Scalar> Lister<'a, S> {
    fn vector(&mut self, name: String, v: &'a [S]) {
        self.out.push((name, vec![v.len()], v));
    }

    fn matrix(&mut self, name: String, m: &'a Matrix<S>) {
        self.out.push((name, vec![m.rows(), m.cols()], m.as_slice()));
    }

    fn linear(&mut self, prefix: &str, w: &str, b: &str, l: &'a Linear<S>) {
        self.matrix(format!("{prefix}.{w}"), &l.weight);
        self.vector(format!("{prefix}.{b}"), &l.bias);
    }

    fn attention(&mut self, prefix: &str, a: &'a AttentionParams<S>) {
        self.linear(prefix, "Wq", "bq", &a.query);
        self.linear(prefix, "Wk", "bk", &a.key);
        self.linear(prefix, "Wv", "bv", &a.value);
        self.linear(prefix, "Wo", "bo", &a.output);
    }

    fn layer_norm(&mut self, prefix: &str, ln: &'a LayerNormParams<S>) {
        self.vector(format!("{prefix}.gamma"), &ln.gamma);
        self.vector(format!("{prefix}.beta"), &ln.beta);
    }

    fn ffn(&mut self, prefix: &str, f: &'a FeedForwardParams<S>) {
        self.linear(prefix, "W1", "b1", &f.fc1);
        self.linear(prefix, "W2", "b2", &f.fc2);
    }
}

impl<S: Scalar> TransformerWeights<S> {
    /// Builds weights by requesting every tensor of `config` in canonical order.
    pub fn from_tensors<F>(config: &ModelConfig, fetch: F) -> Result<Self>
    where
        F: FnMut(&TensorSpec) -> Result<Vec<S>>,
    {
        config.validate()?;
        let d = config.model_dim;
        let f = config.ffn_dim;
        let mut b = Builder { fetch };
        let src_embed = b.matrix("src.embed".into(), config.vocab_size_src, d)?;
        let tgt_embed = b.matrix("tgt.embed".into(), config.vocab_size_tgt, d)?;
        let (src_pos, tgt_pos) = match config.positional {
            Positional::Sinusoidal => (None, None),
            Positional::Learned => (
                Some(b.matrix("src.pos".into(), config.max_positions, d)?),
                Some(b.matrix("tgt.pos".into(), config.max_positions, d)?),
            ),
        };
        let mut encoder = Vec::with_capacity(config.num_encoder_layers);
        for l in 0..config.num_encoder_layers {
            encoder.push(EncoderLayerParams {
                self_attn: b.attention(&format!("enc.{l}.self"), d)?,
                self_ln: b.layer_norm(&format!("enc.{l}.self_ln"), d)?,
                ffn: b.ffn(&format!("enc.{l}.ffn"), d, f)?,
                ffn_ln: b.layer_norm(&format!("enc.{l}.ffn_ln"), d)?,
            });
        }
        let mut decoder = Vec::with_capacity(config.num_decoder_layers);
        for l in 0..config.num_decoder_layers {
            decoder.push(DecoderLayerParams {
                self_attn: b.attention(&format!("dec.{l}.self"), d)?,
                self_ln: b.layer_norm(&format!("dec.{l}.self_ln"), d)?,
                cross_attn: b.attention(&format!("dec.{l}.cross"), d)?,
                cross_ln: b.layer_norm(&format!("dec.{l}.cross_ln"), d)?,
                ffn: b.ffn(&format!("dec.{l}.ffn"), d, f)?,
                ffn_ln: b.layer_norm(&format!("dec.{l}.ffn_ln"), d)?,
            });
        }
        let output = b.linear("out", "W", "b", config.vocab_size_tgt, d)?;
        Ok(Self {
            src_embed,
            tgt_embed,
            src_pos,
            tgt_pos,
            encoder,
            decoder,
            output,
        })
    }

    /// Every tensor as `(name, shape, data)`, in canonical order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[S])> {
        let mut l = Lister { out: Vec::new() };
        l.matrix("src.embed".into(), &self.src_embed);
        l.matrix("tgt.embed".into(), &self.tgt_embed);
        if let (Some(sp), Some(tp)) = (&self.src_pos, &self.tgt_pos) {
            l.matrix("src.pos".into(), sp);
            l.matrix("tgt.pos".into(), tp);
        }
        for (i, layer) in self.encoder.iter().enumerate() {
            l.attention(&format!("enc.{i}.self"), &layer.self_attn);
            l.layer_norm(&format!("enc.{i}.self_ln"), &layer.self_ln);
            l.ffn(&format!("enc.{i}.ffn"), &layer.ffn);
            l.layer_norm(&format!("enc.{i}.ffn_ln"), &layer.ffn_ln);
        }
        for (i, layer) in self.decoder.iter().enumerate() {
            l.attention(&format!("dec.{i}.self"), &layer.self_attn);
            l.layer_norm(&format!("dec.{i}.self_ln"), &layer.self_ln);
            l.attention(&format!("dec.{i}.cross"), &layer.cross_attn);
            l.layer_norm(&format!("dec.{i}.cross_ln"), &layer.cross_ln);
            l.ffn(&format!("dec.{i}.ffn"), &layer.ffn);
            l.layer_norm(&format!("dec.{i}.ffn_ln"), &layer.ffn_ln);
        }
        l.linear("out", "W", "b", &self.output);
        l.out
    }

    /// Random weights from a fixed seed.
    ///
    /// Projections are drawn with standard deviation `1/sqrt(fan_in)`, LN gains
    /// around 1, biases and LN offsets small.
    pub fn random(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.model_dim as f64;
        Self::from_tensors(config, |spec| {
            let leaf = spec.name.rsplit('.').next().unwrap_or_default();
            let (mean, std) = match leaf {
                "gamma" => (1.0, 0.1),
                "beta" => (0.0, 0.1),
                "embed" | "pos" => (0.0, 1.0 / d.sqrt()),
                l if l.starts_with('b') => (0.0, 0.1),
                _ => (0.0, 1.0 / (spec.shape[1] as f64).sqrt()),
            };
            let normal = Normal::new(mean, std).expect("finite std");
            Ok((0..spec.numel())
                .map(|_| S::from_f64(normal.sample(&mut rng)))
                .collect())
        })
    }

    /// Converts the element type, rounding through `f64`.
    pub fn cast<T: Scalar>(&self, config: &ModelConfig) -> Result<TransformerWeights<T>> {
        let map: HashMap<String, &[S]> = self.tensors().into_iter().map(|(name, _, data)| (name, data)).collect();
        TransformerWeights::from_tensors(config, |spec| {
            let data = map.get(&spec.name).ok_or_else(|| Error::MissingTensor {
                name: spec.name.clone(),
            })?;
            Ok(data.iter().map(|v| T::from_f64(v.to_f64())).collect())
        })
    }

    /// Checks every tensor against the shapes `config` requires.
    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let expected = tensor_specs(config)?;
        let actual = self.tensors();
        if expected.len() != actual.len() {
            return Err(Error::InvalidConfig(format!(
                "config requires {} tensors, weights hold {}",
                expected.len(),
                actual.len()
            )));
        }
        for (spec, (name, shape, _)) in expected.iter().zip(actual) {
            if spec.name != name {
                return Err(Error::MissingTensor {
                    name: spec.name.clone(),
                });
            }
            if spec.shape != shape {
                return Err(Error::ShapeMismatch {
                    name,
                    expected: spec.shape.clone(),
                    found: shape,
                });
            }
        }
        Ok(())
    }
}

/// All tensors `config` requires, in canonical order.
pub fn tensor_specs(config: &ModelConfig) -> Result<Vec<TensorSpec>> {
    let mut specs = Vec::new();
    TransformerWeights::<f32>::from_tensors(config, |spec| {
        specs.push(spec.clone());
        Ok(vec![0.0; spec.numel()])
    })?;
    Ok(specs)
}
