//! Adversarial generator that maps sEMG windows to virtual IMU windows.
//!
//! The generator widens the channel axis with three stride-(1, 2)
//! transposed convolutions (32, 16 and 1 maps), flattens, and projects onto
//! `k * c2` tanh outputs. The discriminator is one stride-3 convolution with
//! 16 maps followed by a single sigmoid unit. Both are trained with Adam in
//! alternating discriminator/generator steps.

mod model;
mod train;

pub use model::{
    build_discriminator, build_generator, Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, GeneratorMeta,
    sidecar_path, windows_to_tensor,
};
pub use train::{
    channel_correlation, discriminator_step, gan_value, generator_step, train_gan, GanEpoch, GanHistory, GanTrainConfig,
    GeneratorLoss,
};
