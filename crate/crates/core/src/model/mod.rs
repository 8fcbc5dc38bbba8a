//! Weights, the ALTIWGT1 file format and the traced forward pass.

pub mod config;
pub mod format;
pub mod forward;
pub mod trace;
pub mod weights;

pub use config::{ModelConfig, Positional};
pub use format::{decode_model, encode_model, load_model, save_model};
pub use forward::{argmax, layer_norm, Transformer};
pub use trace::{AttentionWeights, DecoderLayerTrace, EncoderLayerTrace, ForwardTrace, LnTrace};
pub use weights::{tensor_specs, TensorSpec, TransformerWeights};
