//! Minimal deterministic CNN core: a fixed sequential stack of layers over
//! NCHW tensors, the softmax/squared-distance loss, Adam, Xavier
//! initialisation and a finite-difference gradient checker.
//!
//! Training runs in `f32`; gradient checks run the same code in `f64`.

mod adam;
mod arch;
mod gradcheck;
mod init;
mod loss;
mod network;
pub mod ops;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use arch::{Architecture, LayerSpec};
pub use gradcheck::{gradient_check, random_batch, GradCheckReport, NetworkObjective, Objective};
pub use init::{xavier_bound, xavier_init};
pub use loss::{euclid_softmax_loss, multi_hot_loss_floor};
pub use network::{ForwardCache, Network};
pub use scalar::Scalar;
pub use tensor::Tensor;
