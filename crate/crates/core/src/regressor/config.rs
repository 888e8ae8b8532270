use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Output width of the ResNet-50 trunk after global pooling.
pub const RESNET50_FEATURES: usize = 2048;
/// Hidden width of BERT-base.
pub const BERT_BASE_FEATURES: usize = 768;
/// Width of the first fully connected fusion layer.
pub const FUSION_HIDDEN_UNITS: usize = 529;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadActivation {
    #[default]
    Relu,
    Gelu,
    Tanh,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub fn dtype(self) -> candle_core::DType {
        match self {
            Precision::F32 => candle_core::DType::F32,
            Precision::F64 => candle_core::DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ImageEncoderSpec {
    /// ImageNet-pretrained ResNet-50 trunk (final classifier dropped),
    /// 224x224 input.
    Resnet50 { weights: PathBuf },
    /// Two strided convolutions, global average pooling and a linear
    /// projection. Randomly initialized; meant for smoke runs and tests.
    Compact {
        #[serde(default = "default_compact_size")]
        input_size: usize,
        #[serde(default = "default_compact_channels")]
        channels: usize,
    },
}

fn default_compact_size() -> usize {
    32
}
fn default_compact_channels() -> usize {
    16
}

impl ImageEncoderSpec {
    pub fn input_size(&self) -> usize {
        match self {
            ImageEncoderSpec::Resnet50 { .. } => 224,
            ImageEncoderSpec::Compact { input_size, .. } => *input_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TextEncoderSpec {
    /// Pretrained uncased BERT-base; the `[CLS]` hidden state is the feature.
    Bert {
        weights: PathBuf,
        config: PathBuf,
        tokenizer: PathBuf,
        #[serde(default = "default_max_len")]
        max_len: usize,
    },
    /// Hashed bag-of-words: lowercase word tokens hashed into buckets, a
    /// learned embedding per bucket plus a leading `[CLS]` slot, mean pooled
    /// and projected.
    Hashed {
        #[serde(default = "default_buckets")]
        buckets: usize,
        #[serde(default = "default_embed_dim")]
        embed_dim: usize,
        #[serde(default = "default_max_len")]
        max_len: usize,
    },
}

fn default_max_len() -> usize {
    512
}
fn default_buckets() -> usize {
    4096
}
fn default_embed_dim() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRegressorConfig {
    pub image_feature_dim: usize,
    pub text_feature_dim: usize,
    pub hidden_units: usize,
    pub head_activation: HeadActivation,
    pub output_dim: usize,
    pub finetune_encoders: bool,
    pub image_encoder: ImageEncoderSpec,
    pub text_encoder: TextEncoderSpec,
    #[serde(default)]
    pub precision: Precision,
}

impl FusionRegressorConfig {
    /// ResNet-50 + BERT-base + 529-unit head, both encoders fine-tuned.
    pub fn pretrained(
        resnet_weights: PathBuf,
        bert_weights: PathBuf,
        bert_config: PathBuf,
        bert_tokenizer: PathBuf,
    ) -> Self {
        Self {
            image_feature_dim: RESNET50_FEATURES,
            text_feature_dim: BERT_BASE_FEATURES,
            hidden_units: FUSION_HIDDEN_UNITS,
            head_activation: HeadActivation::Relu,
            output_dim: 1,
            finetune_encoders: true,
            image_encoder: ImageEncoderSpec::Resnet50 {
                weights: resnet_weights,
            },
            text_encoder: TextEncoderSpec::Bert {
                weights: bert_weights,
                config: bert_config,
                tokenizer: bert_tokenizer,
                max_len: default_max_len(),
            },
            precision: Precision::F32,
        }
    }

    /// Same feature widths and head as [`Self::pretrained`], with compact
    /// randomly initialized encoders that are frozen.
    pub fn compact() -> Self {
        Self {
            image_feature_dim: RESNET50_FEATURES,
            text_feature_dim: BERT_BASE_FEATURES,
            hidden_units: FUSION_HIDDEN_UNITS,
            head_activation: HeadActivation::Relu,
            output_dim: 1,
            finetune_encoders: false,
            image_encoder: ImageEncoderSpec::Compact {
                input_size: default_compact_size(),
                channels: default_compact_channels(),
            },
            text_encoder: TextEncoderSpec::Hashed {
                buckets: default_buckets(),
                embed_dim: default_embed_dim(),
                max_len: default_max_len(),
            },
            precision: Precision::F32,
        }
    }

    pub fn concat_dim(&self) -> usize {
        self.image_feature_dim + self.text_feature_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_feature_dim == 0 || self.text_feature_dim == 0 || self.hidden_units == 0 {
            return Err(Error::Config("feature and hidden widths must be positive".into()));
        }
        if self.output_dim != 1 {
            return Err(Error::Config(format!(
                "the regressor predicts one score, output_dim {} unsupported",
                self.output_dim
            )));
        }
        if matches!(self.image_encoder, ImageEncoderSpec::Resnet50 { .. })
            && self.image_feature_dim != RESNET50_FEATURES
        {
            return Err(Error::Config(format!(
                "ResNet-50 emits {RESNET50_FEATURES}-D features, config says {}",
                self.image_feature_dim
            )));
        }
        if let ImageEncoderSpec::Compact {
            input_size,
            channels,
        } = self.image_encoder
        {
            if input_size < 4 || channels == 0 {
                return Err(Error::Config("compact encoder needs input_size >= 4 and channels > 0".into()));
            }
        }
        if let TextEncoderSpec::Hashed {
            buckets, embed_dim, ..
        } = self.text_encoder
        {
            if buckets < 2 || embed_dim == 0 {
                return Err(Error::Config("hashed encoder needs >= 2 buckets and embed_dim > 0".into()));
            }
        }
        Ok(())
    }
}
