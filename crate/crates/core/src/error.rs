use thiserror::Error;

pub type Result<T> = std::result::Result<T, CodecError>;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A symbol received zero probability from its model.
    #[error("probability model error: {0}")]
    Model(String),
    #[error("symbol {symbol} is outside the table support [{min}, {max}]")]
    OutOfSupport { symbol: i32, min: i32, max: i32 },
    #[error("truncated stream: {0}")]
    Truncated(String),
    #[error("corrupt stream: {0}")]
    Corrupt(String),
    #[error(
        "checksum mismatch in layer {layer} segment (stored {stored:08x}, computed {computed:08x})"
    )]
    Checksum {
        layer: u8,
        stored: u32,
        computed: u32,
    },
    #[error("config digest mismatch: stream was produced with weights {stream}, loaded weights are {weights}")]
    DigestMismatch { stream: String, weights: String },
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
