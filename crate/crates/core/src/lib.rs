//! Encoder-decoder Transformer inference with ALTI+ input attributions.
//!
//! A forward pass records a [`ForwardTrace`]; an [`Attributor`] replays each
//! attention block from the trace as a sum of per-token transformed vectors,
//! turns those into row-stochastic contribution matrices, and rolls them
//! through encoder and decoder to obtain, for every predicted token, the
//! relevance of each source token and each target-prefix token.
//!
//! ```
//! use alti_core::{Attributor, ModelConfig, TokenSequence, Transformer};
//!
//! let model = Transformer::<f32>::random(ModelConfig::toy(2, 2, 4), 7).unwrap();
//! let src = TokenSequence::source(vec![5, 9, 3, 0], 0).unwrap();
//! let tgt = TokenSequence::target_prefix(vec![0, 4, 6], 0).unwrap();
//! let (_, trace) = model.forward_with_trace(&src, &tgt).unwrap();
//! let rel = Attributor::new(&model, &trace).relevance().unwrap();
//! for t in 0..3 {
//!     let total: f64 = rel.source_relevance.row(t).iter().sum::<f64>()
//!         + rel.target_relevance.row(t).iter().sum::<f64>();
//!     assert!((total - 1.0).abs() < 1e-5);
//! }
//! ```

pub mod aggregation;
pub mod contributions;
pub mod decomposition;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod scalar;
pub mod tensor;
pub mod tokens;

pub use aggregation::{DegenerateRows, RelevanceLayer, RelevanceResult};
pub use contributions::{ContributionMatrix, DecoderLayerContributions};
pub use decomposition::{Attributor, Site, TransformedVectorSet};
pub use error::{Error, Result};
pub use model::{ForwardTrace, ModelConfig, Transformer, TransformerWeights};
pub use scalar::Scalar;
pub use tensor::Matrix;
pub use tokens::{CorpusLine, SequenceRole, TokenSequence, WordMap};
