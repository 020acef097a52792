use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("channel mismatch: expected {expected} channels, got {got}")]
    ChannelMismatch { expected: usize, got: usize },

    #[error("channels ({channels}) not divisible by head count ({heads})")]
    HeadSplit { channels: usize, heads: usize },

    #[error("input {h}x{w} not divisible by {multiple} (network depth {depth})")]
    Divisibility {
        h: usize,
        w: usize,
        multiple: usize,
        depth: usize,
    },

    #[error(
        "position attention over {positions} positions exceeds budget {budget}; \
         place the block at a coarser level or raise the attention budget"
    )]
    AttentionBudget { positions: usize, budget: usize },

    #[error("non-finite values in {context}")]
    NonFinite { context: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("numeric failure at epoch {epoch}, batch {batch}: loss = {loss}")]
    Numeric {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
