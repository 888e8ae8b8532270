use std::path::PathBuf;

use candle_core::{DType, Device, Tensor};
use candle_nn::VarBuilder;
use candle_transformers::models::clip::{ClipConfig, ClipModel};
use image::imageops::FilterType;
use serde::{Deserialize, Serialize};
use tokenizers::Tokenizer;

use super::{BackendDescriptor, EmbeddingBackend, EmbeddingVector, Patch};
use crate::error::{Error, Result};

const CLIP_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
const CLIP_STD: [f32; 3] = [0.268_629_54, 0.261_302_6, 0.275_777_1];
const MAX_TOKENS: usize = 77;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClipBackendConfig {
    /// `model.safetensors` of an `openai/clip-vit-base-patch32` checkpoint.
    pub model_path: PathBuf,
    /// Matching `tokenizer.json`.
    pub tokenizer_path: PathBuf,
    #[serde(default = "default_max_batch")]
    pub max_batch: usize,
}

fn default_max_batch() -> usize {
    32
}

/// Pretrained CLIP ViT-B/32 producing 512-D joint embeddings.
///
/// Each patch is resized on its own to the model's 224x224 input, so windows
/// of every size are seen at the same resolution.
pub struct ClipBackend {
    descriptor: BackendDescriptor,
    model: ClipModel,
    tokenizer: Tokenizer,
    image_size: usize,
    device: Device,
}

impl ClipBackend {
    pub fn load(config: &ClipBackendConfig) -> Result<Self> {
        for path in [&config.model_path, &config.tokenizer_path] {
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "CLIP backend file not found: {}",
                    path.display()
                )));
            }
        }
        let device = Device::Cpu;
        let clip_config = ClipConfig::vit_base_patch32();
        // SAFETY: the file is memory-mapped read-only and not modified while loaded.
        let vb = unsafe {
            VarBuilder::from_mmaped_safetensors(&[&config.model_path], DType::F32, &device)?
        };
        let model = ClipModel::new(vb, &clip_config)?;
        let tokenizer = Tokenizer::from_file(&config.tokenizer_path).map_err(|e| {
            Error::Config(format!("{}: {e}", config.tokenizer_path.display()))
        })?;
        Ok(Self {
            descriptor: BackendDescriptor {
                name: "clip-vit-base-patch32".into(),
                embedding_dim: clip_config.text_config.projection_dim,
                max_batch: config.max_batch.max(1),
            },
            model,
            tokenizer,
            image_size: clip_config.image_size,
            device,
        })
    }

    fn backend_err(&self, cause: impl std::fmt::Display) -> Error {
        Error::Backend {
            backend: self.descriptor.name.clone(),
            cause: cause.to_string(),
        }
    }

    fn patch_tensor(&self, patch: &Patch<'_>) -> Result<Tensor> {
        let r = patch.rect;
        let crop = image::imageops::crop_imm(patch.image, r.x, r.y, r.width, r.height).to_image();
        let side = self.image_size as u32;
        let resized = image::imageops::resize(&crop, side, side, FilterType::Triangle);
        let n = self.image_size * self.image_size;
        let mut data = vec![0f32; 3 * n];
        for (i, px) in resized.pixels().enumerate() {
            for c in 0..3 {
                data[c * n + i] = (f32::from(px[c]) / 255.0 - CLIP_MEAN[c]) / CLIP_STD[c];
            }
        }
        Ok(Tensor::from_vec(
            data,
            (3, self.image_size, self.image_size),
            &self.device,
        )?)
    }

    fn rows_to_vectors(&self, features: &Tensor) -> Result<Vec<EmbeddingVector>> {
        features
            .to_dtype(DType::F32)?
            .to_vec2::<f32>()?
            .into_iter()
            .map(|row| EmbeddingVector::new(row).map_err(|e| self.backend_err(e)))
            .collect()
    }
}

impl EmbeddingBackend for ClipBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn embed_text(&self, description: &str) -> Result<EmbeddingVector> {
        let encoding = self
            .tokenizer
            .encode(description, true)
            .map_err(|e| self.backend_err(e))?;
        let mut ids = encoding.get_ids().to_vec();
        if ids.len() > MAX_TOKENS {
            // keep the end-of-text token, which the text tower pools on
            let eot = *ids.last().expect("nonempty");
            ids.truncate(MAX_TOKENS - 1);
            ids.push(eot);
        }
        let input = Tensor::new(ids.as_slice(), &self.device)?.unsqueeze(0)?;
        let features = self
            .model
            .get_text_features(&input)
            .map_err(|e| self.backend_err(e))?;
        self.rows_to_vectors(&features)?
            .pop()
            .ok_or_else(|| self.backend_err("empty text feature batch"))
    }

    fn embed_patch_batch(&self, patches: &[Patch<'_>]) -> Result<Vec<EmbeddingVector>> {
        if patches.is_empty() {
            return Ok(Vec::new());
        }
        let tensors = patches
            .iter()
            .map(|p| self.patch_tensor(p))
            .collect::<Result<Vec<_>>>()?;
        let batch = Tensor::stack(&tensors, 0)?;
        let features = self
            .model
            .get_image_features(&batch)
            .map_err(|e| self.backend_err(e))?;
        self.rows_to_vectors(&features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_weights_is_config_error() {
        let cfg = ClipBackendConfig {
            model_path: "/nonexistent/model.safetensors".into(),
            tokenizer_path: "/nonexistent/tokenizer.json".into(),
            max_batch: 8,
        };
        assert!(matches!(ClipBackend::load(&cfg), Err(Error::Config(_))));
    }
}
