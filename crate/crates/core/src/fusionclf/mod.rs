//! Recognition models: per-modality CNN streams joined by a fusion head.

mod model;
mod train;

pub use model::{build_multimodal, build_unimodal, Classifier, ClassifierConfig, FusionConfig, StreamConfig};
pub use train::{
    majority_vote, predict, pretrain_then_finetune, train_classifier, ClfEpoch, ClfHistory, ClfTrainConfig, LabeledWindows,
    Prediction,
};
