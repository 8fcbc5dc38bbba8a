use thiserror::Error;

/// Errors produced by model loading, inference, attribution and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("not an ALTIWGT1 weight file (bad magic)")]
    BadMagic,

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("invalid model config: {0}")]
    InvalidConfig(String),

    #[error("missing tensor `{name}`")]
    MissingTensor { name: String },

    #[error("unexpected tensor `{name}` not required by the config")]
    UnexpectedTensor { name: String },

    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("checksum mismatch for `{name}`: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { name: String, stored: u32, computed: u32 },

    #[error("unsupported dtype `{dtype}` for tensor `{name}`")]
    UnsupportedDtype { name: String, dtype: String },

    #[error("tensor `{name}` byte range {offset}..{end} lies outside the payload ({payload_len} bytes)")]
    Truncated {
        name: String,
        offset: usize,
        end: usize,
        payload_len: usize,
    },

    #[error("length mismatch: {context} (expected {expected}, found {found})")]
    LengthMismatch {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error("token id {id} out of range for {role} vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, role: &'static str, vocab: usize },

    #[error("{role} sequence of length {len} exceeds max_positions {max}")]
    SequenceTooLong { role: &'static str, len: usize, max: usize },

    #[error("invalid token sequence: {0}")]
    InvalidSequence(String),

    #[error("index {index} out of range for {what} (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("zero standard deviation with eps = 0 in layer normalization")]
    ZeroStd,

    #[error("max_len must be at least 1")]
    ZeroMaxLen,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero variance in {0}")]
    ZeroVariance(&'static str),

    #[error("not enough data points: need at least 2, got {0}")]
    TooFewPoints(usize),

    #[error("model config has no unknown-token id")]
    MissingUnknownToken,

    #[error("{0}")]
    WordMap(String),

    #[error("alignment parse error at line {line}, column {column}: {message}")]
    AlignmentParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("corpus parse error at line {line}, column {column}: {message}")]
    CorpusParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("alignment error rate undefined: hypothesis and sure set are both empty")]
    EmptyAer,

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
