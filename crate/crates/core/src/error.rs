use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("frequency {freq} Hz is at or above the Nyquist limit for {sample_rate} Hz (would alias)")]
    Aliasing { freq: f64, sample_rate: u32 },

    #[error("signal too short: {len} samples available, {needed} required")]
    SignalTooShort { len: usize, needed: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("normal matrix is singular (pivot {pivot:e} at column {column}); retry with ridge > 0")]
    Singular { column: usize, pivot: f64 },

    #[error("requested {k} components but the data has rank {rank}")]
    RankDeficient { k: usize, rank: usize },

    #[error("non-finite values in the output of layer {layer} ({kind})")]
    NonFinite { layer: usize, kind: &'static str },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("empty filter: mel band {band} covers no FFT bin; reduce n_mels or increase fft size")]
    EmptyFilter { band: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
