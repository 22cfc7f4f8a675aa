use thiserror::Error;

pub type Result<T> = std::result::Result<T, ImgError>;

#[derive(Debug, Error)]
pub enum ImgError {
    #[error("expected {expected} channels, got {actual}")]
    ChannelCount { expected: usize, actual: usize },

    #[error("size mismatch: {left_h}x{left_w} vs {right_h}x{right_w}")]
    SizeMismatch {
        left_h: usize,
        left_w: usize,
        right_h: usize,
        right_w: usize,
    },

    #[error("buffer holds {actual} values, {expected} required for the given dimensions")]
    BufferLength { expected: usize, actual: usize },

    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("patch grid mismatch: {0}")]
    GridMismatch(String),

    #[error("image codec: {0}")]
    Codec(#[from] ::image::ImageError),

    #[error("malformed raw dump: {0}")]
    RawFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
