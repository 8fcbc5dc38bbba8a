use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How positions are encoded before the first layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Positional {
    #[default]
    Sinusoidal,
    /// `src.pos` / `tgt.pos` tables of shape `[max_positions, model_dim]`.
    Learned,
}

/// Hyperparameters of a post-LN encoder-decoder Transformer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_encoder_layers: usize,
    pub num_decoder_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub head_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size_src: usize,
    pub vocab_size_tgt: usize,
    pub max_positions: usize,
    pub ln_epsilon: f64,
    #[serde(default)]
    pub positional: Positional,
    /// `</s>`, shared by both vocabularies.
    pub eos_id: u32,
    /// `<unk>` in the target vocabulary, needed for prefix perturbation.
    #[serde(default)]
    pub unk_id: Option<u32>,
}

impl ModelConfig {
    /// A small config convenient for tests and demos.
    pub fn toy(layers: usize, heads: usize, head_dim: usize) -> Self {
        let model_dim = heads * head_dim;
        Self {
            num_encoder_layers: layers,
            num_decoder_layers: layers,
            num_heads: heads,
            model_dim,
            head_dim,
            ffn_dim: 2 * model_dim,
            vocab_size_src: 24,
            vocab_size_tgt: 24,
            max_positions: 64,
            ln_epsilon: 1e-5,
            positional: Positional::Sinusoidal,
            eos_id: 0,
            unk_id: Some(1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_encoder_layers", self.num_encoder_layers),
            ("num_decoder_layers", self.num_decoder_layers),
            ("num_heads", self.num_heads),
            ("model_dim", self.model_dim),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
            ("vocab_size_src", self.vocab_size_src),
            ("vocab_size_tgt", self.vocab_size_tgt),
            ("max_positions", self.max_positions),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.model_dim != self.num_heads * self.head_dim {
            return Err(Error::InvalidConfig(format!(
                "model_dim {} != num_heads {} x head_dim {}",
                self.model_dim, self.num_heads, self.head_dim
            )));
        }
        if !self.ln_epsilon.is_finite() || self.ln_epsilon <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "ln_epsilon must be a finite positive number, got {}",
                self.ln_epsilon
            )));
        }
        let eos = self.eos_id as usize;
        if eos >= self.vocab_size_src || eos >= self.vocab_size_tgt {
            return Err(Error::InvalidConfig(format!("eos_id {eos} outside a vocabulary")));
        }
        if let Some(unk) = self.unk_id {
            if unk as usize >= self.vocab_size_tgt {
                return Err(Error::InvalidConfig(format!(
                    "unk_id {unk} outside the target vocabulary"
                )));
            }
        }
        Ok(())
    }
}
