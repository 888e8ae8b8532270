//! Cross-modal realness regressor: an image encoder and a text encoder whose
//! features are concatenated and passed through a fully connected head that
//! predicts one score, trained with MSE against MOS.

pub mod config;
mod encoders;
pub mod inputs;
pub mod model;
pub mod train;

pub use config::{
    FusionRegressorConfig, HeadActivation, ImageEncoderSpec, Precision, TextEncoderSpec,
    BERT_BASE_FEATURES, FUSION_HIDDEN_UNITS, RESNET50_FEATURES,
};
pub use inputs::{prepare_inputs, AblationMode, Augmentation, ImageInput, ModelInput, Sample};
pub use model::{build_model, FusionRegressor, TargetScale};
pub use train::{
    dataset_loss, evaluate, mse, train, train_with_observer, EpochRecord, TargetScaling,
    TrainConfig, TrainHistory, Trainer,
};
