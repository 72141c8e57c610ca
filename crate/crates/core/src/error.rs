use thiserror::Error;

/// Errors produced by the library. The CLI maps every variant to exit code 1.
#[derive(Debug, Error)]
pub enum LacError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f32 },

    #[error("index {index} out of range for axis of extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },

    #[error("layer {layer} changed hidden shape from {expected:?} to {actual:?}")]
    LayerShape {
        layer: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("progress history is empty")]
    EmptyHistory,

    #[error("invalid policy: {0}")]
    Policy(String),

    #[error("invalid model config: {0}")]
    Config(String),

    #[error("sequence of length {needed} exceeds max_seq {max}")]
    SequenceOverflow { needed: usize, max: usize },

    #[error("weight container: bad magic {0:?}")]
    BadMagic([u8; 8]),

    #[error("weight container: {0}")]
    LengthMismatch(String),

    #[error("weight container: unknown tensor {0:?}")]
    UnknownTensor(String),

    #[error("weight container: missing tensor {0:?}")]
    MissingTensor(String),

    #[error("weight container header: {0}")]
    Header(String),

    #[error("trace line {line}: {message}")]
    TraceParse { line: usize, message: String },

    #[error("records mix layer counts {first} and {other}")]
    MixedLayerCounts { first: usize, other: usize },

    #[error("{0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LacError>;
