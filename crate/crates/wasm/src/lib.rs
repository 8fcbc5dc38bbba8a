//! Browser bindings for the attribution demo in `www/`.
//!
//! A [`Demo`] holds one seeded toy model. Each method takes token IDs as text
//! (the corpus line format, `+` joining subwords) and returns a JSON string.

use alti_core::aggregation::{encoder_diagonal_share, encoder_rollout, DiagonalShare};
use alti_core::evaluation::extract_alignments;
use alti_core::{Attributor, CorpusLine, Matrix, ModelConfig, Site, TokenSequence, Transformer};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const MAX_LEN: usize = 16;

#[wasm_bindgen]
pub struct Demo {
    model: Transformer<f64>,
}

#[derive(Serialize)]
struct Attribution {
    source: Vec<u32>,
    prefix: Vec<u32>,
    predicted: Vec<u32>,
    source_relevance: Vec<Vec<f64>>,
    target_relevance: Vec<Vec<f64>>,
    source_share: Vec<f64>,
}

#[derive(Serialize)]
struct EncoderMixing {
    source: Vec<u32>,
    layer: Vec<Vec<f64>>,
    rollout: Vec<Vec<f64>>,
    diagonal: DiagonalShare,
}

#[derive(Serialize)]
struct Method {
    name: &'static str,
    scores: Vec<Vec<f64>>,
    alignment: String,
}

#[derive(Serialize)]
struct CrossComparison {
    source: Vec<u32>,
    prefix: Vec<u32>,
    layer: usize,
    methods: Vec<Method>,
}

fn parse(line: &str) -> Result<CorpusLine, String> {
    CorpusLine::parse(line, 1).map_err(|e| e.to_string())
}

fn json<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(|e| e.to_string())
}

fn drop_last_column(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    m.to_rows()
        .into_iter()
        .map(|mut r| {
            r.pop();
            r
        })
        .collect()
}

fn check_layer(layer: usize, count: usize) -> Result<usize, String> {
    if (1..=count).contains(&layer) {
        Ok(layer - 1)
    } else {
        Err(format!("layer {layer} is outside 1..={count}"))
    }
}

impl Demo {
    fn eos(&self) -> u32 {
        self.model.config().eos_id
    }

    fn sequences(&self, source: &str, target: &str) -> Result<(TokenSequence, TokenSequence, Vec<u32>), String> {
        let eos = self.eos();
        let src = parse(source)?.to_source(eos).map_err(|e| e.to_string())?;
        if target.trim().is_empty() {
            let generated = self.model.greedy_decode(&src, MAX_LEN).map_err(|e| e.to_string())?.ids;
            let mut prefix = vec![eos];
            prefix.extend_from_slice(&generated[..generated.len() - 1]);
            let prefix = TokenSequence::target_prefix(prefix, eos).map_err(|e| e.to_string())?;
            Ok((src, prefix, generated))
        } else {
            let (prefix, _) = parse(target)?.to_forced_target(eos).map_err(|e| e.to_string())?;
            let mut predicted = prefix.ids[1..].to_vec();
            predicted.push(eos);
            Ok((src, prefix, predicted))
        }
    }

    pub fn attribute_json(&self, source: &str, target: &str) -> Result<String, String> {
        let (src, prefix, predicted) = self.sequences(source, target)?;
        let (_, trace) = self
            .model
            .forward_with_trace(&src, &prefix)
            .map_err(|e| e.to_string())?;
        let rel = Attributor::new(&self.model, &trace)
            .relevance()
            .map_err(|e| e.to_string())?;
        json(&Attribution {
            source_share: rel.total_source_contribution().per_step,
            source_relevance: rel.source_relevance.to_rows(),
            target_relevance: rel.target_relevance.to_rows(),
            source: src.ids,
            prefix: prefix.ids,
            predicted,
        })
    }

    pub fn encoder_mixing_json(&self, source: &str, layer: usize) -> Result<String, String> {
        let src = parse(source)?.to_source(self.eos()).map_err(|e| e.to_string())?;
        let (_, trace) = self
            .model
            .forward_with_trace(
                &src,
                &TokenSequence::target_prefix(vec![self.eos()], self.eos()).unwrap(),
            )
            .map_err(|e| e.to_string())?;
        let attr = Attributor::new(&self.model, &trace);
        let idx = check_layer(layer, attr.num_encoder_layers())?;
        let layers = attr.encoder_matrices().map_err(|e| e.to_string())?;
        json(&EncoderMixing {
            source: src.ids,
            layer: layers[idx].to_rows(),
            rollout: encoder_rollout(&layers[..=idx]).map_err(|e| e.to_string())?.to_rows(),
            diagonal: encoder_diagonal_share(&layers, layer).map_err(|e| e.to_string())?,
        })
    }

    pub fn compare_cross_json(&self, source: &str, target: &str, layer: usize) -> Result<String, String> {
        let eos = self.eos();
        let src = parse(source)?.to_source(eos).map_err(|e| e.to_string())?;
        let (prefix, predicted_words) = parse(target)?.to_forced_target(eos).map_err(|e| e.to_string())?;
        let (_, trace) = self
            .model
            .forward_with_trace(&src, &prefix)
            .map_err(|e| e.to_string())?;
        let attr = Attributor::new(&self.model, &trace);
        let idx = check_layer(layer, attr.num_decoder_layers())?;
        let err = |e: alti_core::Error| e.to_string();
        let (norm_f, norm_t) = attr.vector_norm_baselines(idx, Site::DecoderCross).map_err(err)?;
        let candidates = [
            (
                "ALTI+",
                attr.decoder_layer_matrices(idx).map_err(err)?.cross_part.to_rows(),
            ),
            (
                "attention",
                attr.attention_matrix_baseline(idx, Site::DecoderCross)
                    .map_err(err)?
                    .values
                    .to_rows(),
            ),
            ("||F||", norm_f.values.to_rows()),
            ("||T||", drop_last_column(&norm_t.values)),
        ];
        let source_words = src.words.clone().expect("to_source attaches words");
        let mut methods = Vec::new();
        for (name, scores) in candidates {
            let links = extract_alignments(
                &Matrix::from_rows(&scores).map_err(err)?,
                &source_words,
                &predicted_words,
            )
            .map_err(err)?;
            let mut links: Vec<_> = links.into_iter().collect();
            links.sort_by_key(|&(s, t)| (t, s));
            let alignment = links
                .iter()
                .map(|(s, t)| format!("{}-{}", s + 1, t + 1))
                .collect::<Vec<_>>()
                .join(" ");
            methods.push(Method {
                name,
                scores,
                alignment,
            });
        }
        json(&CrossComparison {
            source: src.ids,
            prefix: prefix.ids,
            layer,
            methods,
        })
    }
}

#[wasm_bindgen]
impl Demo {
    /// Builds a random toy model; the vocabulary has 24 IDs with `</s>` = 0.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, layers: usize, heads: usize, head_dim: usize) -> Result<Demo, JsError> {
        let model = Transformer::random(ModelConfig::toy(layers, heads, head_dim), u64::from(seed))?;
        Ok(Demo { model })
    }

    #[wasm_bindgen(getter)]
    pub fn encoder_layers(&self) -> usize {
        self.model.config().num_encoder_layers
    }

    #[wasm_bindgen(getter)]
    pub fn decoder_layers(&self) -> usize {
        self.model.config().num_decoder_layers
    }

    /// Source and target relevance per predicted token. An empty target runs greedy decoding.
    pub fn attribute(&self, source: &str, target: &str) -> Result<String, JsError> {
        self.attribute_json(source, target).map_err(|e| JsError::new(&e))
    }

    /// One encoder layer's contribution matrix and the rollout up to it (1-based `layer`).
    pub fn encoder_mixing(&self, source: &str, layer: usize) -> Result<String, JsError> {
        self.encoder_mixing_json(source, layer).map_err(|e| JsError::new(&e))
    }

    /// Cross-attention scores and extracted alignments for each method at one decoder layer.
    pub fn compare_cross(&self, source: &str, target: &str, layer: usize) -> Result<String, JsError> {
        self.compare_cross_json(source, target, layer)
            .map_err(|e| JsError::new(&e))
    }
}
