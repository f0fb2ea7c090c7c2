//! Neuralogram: an audio representation built by sliding a trained
//! convolutional network over a signal and stacking the embeddings it
//! produces at each window position.
//!
//! The crate is organised bottom-up:
//!
//! * [`signal`]: probe/corpus signal generators, resampling and the STFT
//!   power spectrogram the network consumes.
//! * [`wav`]: 16-bit PCM mono WAV I/O.
//! * [`transforms`]: mel/chroma filterbanks as explicit linear maps and a
//!   least-squares learner for such maps.
//! * [`nn`]: a small sequential CNN core (tensors, layers, loss, Adam,
//!   Xavier init, gradient checking).
//! * [`corpus`]: the seeded synthetic multi-label corpus.
//! * [`train`]: network input features, training and AUC evaluation.
//! * [`checkpoint`]: the model checkpoint file format.
//! * [`extract`]: Neuralogram extraction and its file formats.
//! * [`probe`]: chirp/rhythm probes, index sorting, embedding-size study
//!   and PCA.
//! * [`render`]: PGM rendering of matrices.

pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod extract;
pub mod matrix;
pub mod nn;
pub mod probe;
pub mod render;
pub mod rng;
pub mod signal;
pub mod train;
pub mod transforms;
pub mod wav;

pub use error::{Error, Result};
pub use matrix::Matrix;
