//! Virtual IMU synthesis for sEMG gesture recognition.
//!
//! An adversarial generator learns to map windows of surface EMG to
//! windows of forearm IMU signals. The synthesized ("virtual") IMU windows
//! then feed the second stream of a dual-stream convolutional classifier,
//! turning a sEMG-only recording into a multimodal input.
//!
//! Module map:
//!
//! * [`sigproc`]: rectification, smoothing, low-pass filtering, decimation,
//!   segmentation and normalization of multichannel series.
//! * [`diffnet`]: tensors, layers with hand-written reverse-mode gradients,
//!   losses, optimizers, gradient checking and checkpoint files.
//! * [`genmodel`]: generator, discriminator and the adversarial training loop.
//! * [`fusionclf`]: per-modality CNN streams, the fusion head, SGD training.
//! * [`datasets`]: manifests, trial files, CSV import, trimming, splits and a
//!   seeded synthetic sEMG/IMU generator.
//! * [`harness`]: experiment pipeline, metrics and reports.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`). Training
//! runs in `f32`; gradient checks run in `f64`. The aliases below name the
//! concrete instantiations used by the pipeline.

pub mod datasets;
pub mod diffnet;
pub mod error;
pub mod fusionclf;
pub mod genmodel;
pub mod harness;
pub mod scalar;
pub mod sigproc;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Single-precision tensor used for training and inference.
pub type Tensor32 = diffnet::Tensor<f32>;
/// Double-precision tensor used by gradient checks.
pub type Tensor64 = diffnet::Tensor<f64>;
/// Multichannel series in the storage precision of trial files.
pub type Series = sigproc::MultichannelSeries<f32>;
/// Multichannel series in double precision.
pub type Series64 = sigproc::MultichannelSeries<f64>;
/// Window type flowing through the pipeline.
pub type Window = sigproc::SignalWindow<f32>;
/// Sequential network in training precision.
pub type Network32 = diffnet::Sequential<f32>;
/// Sequential network in double precision.
pub type Network64 = diffnet::Sequential<f64>;
/// Generator weights and metadata.
pub type GeneratorParams = genmodel::Generator<f32>;
/// Discriminator weights and metadata.
pub type DiscriminatorParams = genmodel::Discriminator<f32>;
/// Uni- or multimodal classifier.
pub type ClassifierParams = fusionclf::Classifier<f32>;
