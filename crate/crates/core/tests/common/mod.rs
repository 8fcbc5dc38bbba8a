//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use alti_core::model::Positional;
use alti_core::{DecoderLayerContributions, Matrix, ModelConfig, Scalar, TokenSequence, Transformer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// One random model plus one sentence pair.
pub struct Case {
    pub config: ModelConfig,
    pub model_seed: u64,
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

impl Case {
    pub fn model<S: Scalar>(&self) -> Transformer<S> {
        Transformer::random(self.config.clone(), self.model_seed).unwrap()
    }

    pub fn source_seq(&self) -> TokenSequence {
        TokenSequence::source(self.source.clone(), self.config.eos_id).unwrap()
    }

    pub fn target_seq(&self) -> TokenSequence {
        TokenSequence::target_prefix(self.target.clone(), self.config.eos_id).unwrap()
    }
}

/// L in {1,2,3}, H in {1,2,4}, d in {8,16}, J and T in 1..=6.
pub fn random_case(rng: &mut ChaCha8Rng) -> Case {
    let layers = rng.random_range(1..=3);
    let heads = [1, 2, 4][rng.random_range(0..3)];
    let d = [8, 16][rng.random_range(0..2)];
    let mut config = ModelConfig::toy(layers, heads, d / heads);
    config.num_decoder_layers = rng.random_range(1..=3);
    if rng.random_bool(0.3) {
        config.positional = Positional::Learned;
    }
    let j = rng.random_range(1..=6);
    let t = rng.random_range(1..=6);
    let mut source: Vec<u32> = (0..j - 1).map(|_| rng.random_range(2..24)).collect();
    source.push(0);
    let mut target = vec![0];
    target.extend((1..t).map(|_| rng.random_range(1..24u32)));
    Case {
        config,
        model_seed: rng.random(),
        source,
        target,
    }
}

pub fn sweep(seed: u64, n: usize) -> Vec<Case> {
    let mut r = rng(seed);
    (0..n).map(|_| random_case(&mut r)).collect()
}

// ---------------------------------------------------------------------------
// Straight-line reference forward pass, written against the raw weights only.

type Vector = Vec<f64>;

fn affine(w: &Matrix<f64>, b: &[f64], x: &[f64]) -> Vector {
    let mut y = vec![0.0; w.rows()];
    for r in 0..w.rows() {
        let mut s = b[r];
        for c in 0..w.cols() {
            s += w.get(r, c) * x[c];
        }
        y[r] = s;
    }
    y
}

pub fn ref_layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vector {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = (var + eps).sqrt();
    (0..x.len()).map(|k| gamma[k] * (x[k] - mean) / sd + beta[k]).collect()
}

fn ref_attention(
    p: &alti_core::model::weights::AttentionParams<f64>,
    queries: &[Vector],
    memory: &[Vector],
    heads: usize,
    causal: bool,
) -> Vec<Vector> {
    let d = queries[0].len();
    let dh = d / heads;
    let q: Vec<Vector> = queries
        .iter()
        .map(|x| affine(&p.query.weight, &p.query.bias, x))
        .collect();
    let k: Vec<Vector> = memory.iter().map(|x| affine(&p.key.weight, &p.key.bias, x)).collect();
    let v: Vec<Vector> = memory
        .iter()
        .map(|x| affine(&p.value.weight, &p.value.bias, x))
        .collect();
    let mut out = Vec::new();
    for i in 0..queries.len() {
        let mut concat = vec![0.0; d];
        for h in 0..heads {
            let keys = if causal { i + 1 } else { memory.len() };
            let scores: Vec<f64> = (0..keys)
                .map(|j| (0..dh).map(|c| q[i][h * dh + c] * k[j][h * dh + c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::MIN, f64::max);
            let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for j in 0..keys {
                let a = (scores[j] - m).exp() / z;
                for c in 0..dh {
                    concat[h * dh + c] += a * v[j][h * dh + c];
                }
            }
        }
        out.push(affine(&p.output.weight, &p.output.bias, &concat));
    }
    out
}

fn ref_ffn(p: &alti_core::model::weights::FeedForwardParams<f64>, x: &[f64]) -> Vector {
    let h: Vector = affine(&p.fc1.weight, &p.fc1.bias, x)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    affine(&p.fc2.weight, &p.fc2.bias, &h)
}

fn ref_embed(ids: &[u32], table: &Matrix<f64>, learned: Option<&Matrix<f64>>, d: usize) -> Vec<Vector> {
    ids.iter()
        .enumerate()
        .map(|(p, &id)| {
            (0..d)
                .map(|c| {
                    let pos = match learned {
                        Some(t) => t.get(p, c),
                        None => {
                            let rate = 10000f64.powf((2 * (c / 2)) as f64 / d as f64);
                            if c % 2 == 0 {
                                (p as f64 / rate).sin()
                            } else {
                                (p as f64 / rate).cos()
                            }
                        }
                    };
                    (d as f64).sqrt() * table.get(id as usize, c) + pos
                })
                .collect()
        })
        .collect()
}

fn add(a: &[f64], b: &[f64]) -> Vector {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Logits for every prefix position, computed independently of the engine.
pub fn reference_logits(model: &Transformer<f64>, source: &[u32], target: &[u32]) -> Vec<Vector> {
    let cfg = model.config();
    let w = model.weights();
    let (d, h, eps) = (cfg.model_dim, cfg.num_heads, cfg.ln_epsilon);
    let mut x = ref_embed(source, &w.src_embed, w.src_pos.as_ref(), d);
    for l in &w.encoder {
        let a = ref_attention(&l.self_attn, &x, &x, h, false);
        let x1: Vec<Vector> = (0..x.len())
            .map(|i| ref_layer_norm(&add(&a[i], &x[i]), &l.self_ln.gamma, &l.self_ln.beta, eps))
            .collect();
        x = x1
            .iter()
            .map(|v| ref_layer_norm(&add(&ref_ffn(&l.ffn, v), v), &l.ffn_ln.gamma, &l.ffn_ln.beta, eps))
            .collect();
    }
    let enc = x;
    let mut y = ref_embed(target, &w.tgt_embed, w.tgt_pos.as_ref(), d);
    for l in &w.decoder {
        let a = ref_attention(&l.self_attn, &y, &y, h, true);
        let ys: Vec<Vector> = (0..y.len())
            .map(|i| ref_layer_norm(&add(&a[i], &y[i]), &l.self_ln.gamma, &l.self_ln.beta, eps))
            .collect();
        let c = ref_attention(&l.cross_attn, &ys, &enc, h, false);
        let yc: Vec<Vector> = (0..ys.len())
            .map(|i| ref_layer_norm(&add(&c[i], &ys[i]), &l.cross_ln.gamma, &l.cross_ln.beta, eps))
            .collect();
        y = yc
            .iter()
            .map(|v| ref_layer_norm(&add(&ref_ffn(&l.ffn, v), v), &l.ffn_ln.gamma, &l.ffn_ln.beta, eps))
            .collect();
    }
    y.iter().map(|v| affine(&w.output.weight, &w.output.bias, v)).collect()
}

// ---------------------------------------------------------------------------
// Random row-stochastic inputs and exhaustive path enumeration.

pub fn stochastic_row(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 0.01).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

pub fn stochastic_matrix(rng: &mut ChaCha8Rng, n: usize) -> Matrix<f64> {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| stochastic_row(rng, n)).collect();
    Matrix::from_rows(&rows).unwrap()
}

/// A random decoder layer: causal self rows and cross rows with a residual column.
pub fn random_decoder_layer(rng: &mut ChaCha8Rng, layer: usize, t: usize, j: usize) -> DecoderLayerContributions {
    let mut self_part = Matrix::zeros(t, t);
    for p in 0..t {
        for (k, v) in stochastic_row(rng, p + 1).into_iter().enumerate() {
            self_part.set(p, k, v);
        }
    }
    let cross: Vec<Vec<f64>> = (0..t).map(|_| stochastic_row(rng, j + 1)).collect();
    DecoderLayerContributions::assemble(layer, self_part, &Matrix::from_rows(&cross).unwrap()).unwrap()
}

/// Every path from encoder output `i` down to source token `s`, multiplied out.
/// `layers[0]` is the first encoder layer.
pub fn encoder_paths(layers: &[Matrix<f64>], i: usize, s: usize) -> f64 {
    match layers.split_last() {
        None => f64::from(u8::from(i == s)),
        Some((top, below)) => (0..top.cols())
            .map(|k| top.get(i, k) * encoder_paths(below, k, s))
            .sum(),
    }
}

/// Node of the decoder DAG reached by following one edge.
enum Step {
    Source(usize),
    Prefix(usize),
}

fn decoder_edges(layer: &DecoderLayerContributions, t: usize) -> Vec<(Step, f64)> {
    let j = layer.source_len();
    let mut out: Vec<(Step, f64)> = (0..j).map(|s| (Step::Source(s), layer.combined.get(t, s))).collect();
    out.extend((0..layer.target_len()).map(|k| (Step::Prefix(k), layer.combined.get(t, j + k))));
    out
}

/// Sums all paths from decoder output `t` (top layer) to source token `s`
/// through cross edges and the encoder, or to prefix embedding `k`.
pub fn decoder_paths(enc: &[Matrix<f64>], dec: &[DecoderLayerContributions], t: usize) -> (Vec<f64>, Vec<f64>) {
    let j = dec[0].source_len();
    let n = dec[0].target_len();
    let mut src = vec![0.0; j];
    let mut tgt = vec![0.0; n];
    fn walk(
        enc: &[Matrix<f64>],
        dec: &[DecoderLayerContributions],
        t: usize,
        weight: f64,
        src: &mut [f64],
        tgt: &mut [f64],
    ) {
        let Some((top, below)) = dec.split_last() else {
            tgt[t] += weight;
            return;
        };
        for (step, w) in decoder_edges(top, t) {
            match step {
                Step::Source(e) => {
                    for (s, slot) in src.iter_mut().enumerate() {
                        *slot += weight * w * encoder_paths(enc, e, s);
                    }
                }
                Step::Prefix(k) => walk(enc, below, k, weight * w, src, tgt),
            }
        }
    }
    walk(enc, dec, t, 1.0, &mut src, &mut tgt);
    (src, tgt)
}

/// `F_i(x_j)` rebuilt head by head from explicit `W_V^h` / `W_O^h` slices.
pub fn brute_force_mixed(
    w_v: &Matrix<f64>,
    w_o: &Matrix<f64>,
    alpha: &[Matrix<f64>],
    x_j: &[f64],
    i: usize,
    j: usize,
) -> Vec<f64> {
    let d = w_o.rows();
    let heads = alpha.len();
    let dh = d / heads;
    let mut out = vec![0.0; d];
    for (h, a) in alpha.iter().enumerate() {
        let v_h: Vec<f64> = (0..dh)
            .map(|r| (0..d).map(|c| w_v.get(h * dh + r, c) * x_j[c]).sum())
            .collect();
        for (r, o) in out.iter_mut().enumerate() {
            *o += (0..dh)
                .map(|c| w_o.get(r, h * dh + c) * a.get(i, j) * v_h[c])
                .sum::<f64>();
        }
    }
    out
}
