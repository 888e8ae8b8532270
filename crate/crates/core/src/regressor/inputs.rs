use std::path::Path;
use std::sync::Arc;

use image::imageops::FilterType;
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::RealnessRecord;
use crate::error::{Error, Result};

const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// Which modalities reach the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Joint,
    /// Description replaced by the empty string.
    ImageOnly,
    /// Image replaced by an all-zero input tensor.
    TextOnly,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [
        AblationMode::ImageOnly,
        AblationMode::TextOnly,
        AblationMode::Joint,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AblationMode::Joint => "joint",
            AblationMode::ImageOnly => "image_only",
            AblationMode::TextOnly => "text_only",
        }
    }
}

impl std::fmt::Display for AblationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AblationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "joint" => Ok(AblationMode::Joint),
            "image_only" => Ok(AblationMode::ImageOnly),
            "text_only" => Ok(AblationMode::TextOnly),
            other => Err(Error::invalid(format!("unknown ablation mode `{other}`"))),
        }
    }
}

/// A decoded training or evaluation example.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub image: Arc<RgbImage>,
    pub description: String,
    pub mos: f64,
}

impl Sample {
    pub fn from_record(record: &RealnessRecord, base_dir: Option<&Path>) -> Result<Self> {
        if !record.mos.is_finite() {
            return Err(Error::invalid(format!("record `{}` has non-finite mos", record.id)));
        }
        let path = record.image_path(base_dir);
        let image = crate::fsutil::load_rgb(&path)?;
        Ok(Self {
            id: record.id.clone(),
            image: Arc::new(image),
            description: record.description.clone(),
            mos: record.mos,
        })
    }
}

#[derive(Debug, Clone)]
pub enum ImageInput {
    Pixels(Arc<RgbImage>),
    Zeros,
}

#[derive(Debug, Clone)]
pub struct ModelInput {
    pub image: ImageInput,
    pub text: String,
}

/// Applies the ablation mode to one sample.
pub fn prepare_inputs(sample: &Sample, mode: AblationMode) -> ModelInput {
    match mode {
        AblationMode::Joint => ModelInput {
            image: ImageInput::Pixels(sample.image.clone()),
            text: sample.description.clone(),
        },
        AblationMode::ImageOnly => ModelInput {
            image: ImageInput::Pixels(sample.image.clone()),
            text: String::new(),
        },
        AblationMode::TextOnly => ModelInput {
            image: ImageInput::Zeros,
            text: sample.description.clone(),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Augmentation {
    #[default]
    None,
    /// Horizontal flip with probability 1/2, then a random crop covering
    /// `min_area..=1` of the image with aspect ratio in `[3/4, 4/3]`.
    FlipCrop { min_area: f64 },
}

impl Augmentation {
    pub fn apply(&self, image: &RgbImage, rng: &mut impl Rng) -> RgbImage {
        match *self {
            Augmentation::None => image.clone(),
            Augmentation::FlipCrop { min_area } => {
                let flipped = if rng.random_bool(0.5) {
                    image::imageops::flip_horizontal(image)
                } else {
                    image.clone()
                };
                let (w, h) = flipped.dimensions();
                let area = f64::from(w * h) * rng.random_range(min_area.clamp(0.05, 1.0)..=1.0);
                let log_ratio = rng.random_range((0.75f64).ln()..=(4.0f64 / 3.0).ln());
                let ratio = log_ratio.exp();
                let cw = ((area * ratio).sqrt().round() as u32).clamp(1, w);
                let ch = ((area / ratio).sqrt().round() as u32).clamp(1, h);
                let x = rng.random_range(0..=w - cw);
                let y = rng.random_range(0..=h - ch);
                image::imageops::crop_imm(&flipped, x, y, cw, ch).to_image()
            }
        }
    }
}

/// Square resize plus ImageNet channel normalization, CHW layout.
pub fn image_to_chw(image: &RgbImage, side: usize) -> Vec<f32> {
    let s = side as u32;
    let resized = if image.dimensions() == (s, s) {
        image.clone()
    } else {
        image::imageops::resize(image, s, s, FilterType::Triangle)
    };
    let n = side * side;
    let mut out = vec![0f32; 3 * n];
    for (i, px) in resized.pixels().enumerate() {
        for c in 0..3 {
            out[c * n + i] = (f32::from(px[c]) / 255.0 - IMAGENET_MEAN[c]) / IMAGENET_STD[c];
        }
    }
    out
}
