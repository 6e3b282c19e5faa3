//! Minimal differentiable-network core.
//!
//! Networks are [`Sequential`] stacks of [`LayerSpec`]s. Every layer has a
//! hand-written backward pass; [`grad_check`] compares them against central
//! finite differences in `f64`. Activations use the `batch x maps x height x
//! width` layout; for signal windows height is time and width is channels.

mod checkpoint;
mod gradcheck;
pub mod kernels;
mod layers;
mod loss;
mod optim;
mod params;
mod sequential;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, param_digest, read_checkpoint, sha256_hex, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, relative_error, CheckLoss, GradCheckConfig, GradCheckReport, TensorCheck};
pub use layers::{Layer, LayerSpec};
pub use loss::{bce, bce_batch, concat_features, split_features, xent, xent_batch, PROB_EPS};
pub use optim::{Adam, AdamConfig, Optimizer, Sgd, StepSchedule};
pub use params::{InitRecord, InitScheme, Param, ParamSet};
pub use sequential::{derive_seed, rng_from_seed, BatchNormConfig, Mode, Sequential};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
