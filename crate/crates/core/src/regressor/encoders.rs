use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor, Var, D};
use candle_nn::{Conv2d, Conv2dConfig, Embedding, Func, Linear, VarBuilder, VarMap};
use candle_transformers::models::bert::{BertModel, Config as BertConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tokenizers::Tokenizer;

use super::config::{ImageEncoderSpec, TextEncoderSpec};
use crate::error::{Error, Result};

/// Seeded parameter creation. Candle's CPU generator cannot be seeded, so
/// every randomly initialized variable is drawn here and inserted into the
/// [`VarMap`] before the layers that use it are built.
pub(crate) struct Init<'a> {
    pub varmap: &'a VarMap,
    pub rng: &'a mut ChaCha8Rng,
    pub dtype: DType,
    pub device: &'a Device,
}

impl Init<'_> {
    fn put(&mut self, name: &str, values: Vec<f64>, shape: &[usize]) -> Result<()> {
        let t = Tensor::from_vec(values, shape, self.device)?.to_dtype(self.dtype)?;
        self.varmap
            .data()
            .lock()
            .expect("varmap lock")
            .insert(name.to_owned(), Var::from_tensor(&t)?);
        Ok(())
    }

    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64) -> Result<()> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.put(name, values, shape)
    }

    fn normal(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        let n = shape.iter().product();
        let values = (0..n).map(|_| StandardNormal.sample(&mut *self.rng)).collect();
        self.put(name, values, shape)
    }

    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` for weight and bias, the usual
    /// default for dense layers.
    pub fn linear(&mut self, prefix: &str, fan_in: usize, fan_out: usize) -> Result<()> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        self.uniform(&format!("{prefix}.weight"), &[fan_out, fan_in], bound)?;
        self.uniform(&format!("{prefix}.bias"), &[fan_out], bound)
    }

    pub fn conv2d(&mut self, prefix: &str, c_in: usize, c_out: usize, k: usize) -> Result<()> {
        let bound = 1.0 / ((c_in * k * k) as f64).sqrt();
        self.uniform(&format!("{prefix}.weight"), &[c_out, c_in, k, k], bound)?;
        self.uniform(&format!("{prefix}.bias"), &[c_out], bound)
    }

    pub fn embedding(&mut self, name: &str, rows: usize, dim: usize) -> Result<()> {
        self.normal(name, &[rows, dim])
    }
}

/// Tensors from a safetensors file, cast to `dtype`.
fn load_pretrained(path: &Path, dtype: DType, device: &Device) -> Result<HashMap<String, Tensor>> {
    if !path.is_file() {
        return Err(Error::Config(format!(
            "pretrained weights not found: {}",
            path.display()
        )));
    }
    let tensors = candle_core::safetensors::load(path, device)?;
    tensors
        .into_iter()
        .map(|(k, t)| Ok((k, t.to_dtype(dtype)?)))
        .collect()
}

/// Builds a [`VarBuilder`] for pretrained weights. Fine-tuned weights become
/// trainable variables under `prefix` in `varmap`; frozen ones stay constant.
fn pretrained_builder<'a>(
    path: &Path,
    prefix: &str,
    finetune: bool,
    varmap: &VarMap,
    dtype: DType,
    device: &Device,
) -> Result<(VarBuilder<'a>, Option<usize>)> {
    let tensors = load_pretrained(path, dtype, device)?;
    if finetune {
        let mut data = varmap.data().lock().expect("varmap lock");
        for (name, t) in tensors {
            data.insert(format!("{prefix}.{name}"), Var::from_tensor(&t)?);
        }
        let expected = data.len();
        drop(data);
        Ok((
            VarBuilder::from_varmap(varmap, dtype, device).pp(prefix),
            Some(expected),
        ))
    } else {
        Ok((VarBuilder::from_tensors(tensors, dtype, device), None))
    }
}

/// A [`VarMap`]-backed builder silently creates any tensor the file lacks;
/// treat that as an incomplete checkpoint instead.
fn check_complete(varmap: &VarMap, expected: Option<usize>, path: &Path) -> Result<()> {
    match expected {
        Some(n) if varmap.all_vars().len() != n => Err(Error::Config(format!(
            "{} is missing tensors required by the encoder",
            path.display()
        ))),
        _ => Ok(()),
    }
}

pub(crate) enum ImageEncoder {
    Resnet(Func<'static>),
    Compact {
        conv1: Conv2d,
        conv2: Conv2d,
        proj: Linear,
    },
}

impl ImageEncoder {
    pub fn build(
        spec: &ImageEncoderSpec,
        feature_dim: usize,
        finetune: bool,
        init: &mut Init<'_>,
    ) -> Result<Self> {
        match spec {
            ImageEncoderSpec::Resnet50 { weights } => {
                let (vb, expected) = pretrained_builder(
                    weights,
                    "image_encoder",
                    finetune,
                    init.varmap,
                    init.dtype,
                    init.device,
                )?;
                let trunk = candle_transformers::models::resnet::resnet50_no_final_layer(vb)
                    .map_err(|e| Error::Config(format!("{}: {e}", weights.display())))?;
                check_complete(init.varmap, expected, weights)?;
                Ok(ImageEncoder::Resnet(trunk))
            }
            &ImageEncoderSpec::Compact { channels, .. } => {
                let c = channels;
                init.conv2d("image_encoder.conv1", 3, c, 3)?;
                init.conv2d("image_encoder.conv2", c, 2 * c, 3)?;
                init.linear("image_encoder.proj", 2 * c, feature_dim)?;
                let vb = VarBuilder::from_varmap(init.varmap, init.dtype, init.device)
                    .pp("image_encoder");
                let cfg = Conv2dConfig {
                    padding: 1,
                    stride: 2,
                    ..Default::default()
                };
                Ok(ImageEncoder::Compact {
                    conv1: candle_nn::conv2d(3, c, 3, cfg, vb.pp("conv1"))?,
                    conv2: candle_nn::conv2d(c, 2 * c, 3, cfg, vb.pp("conv2"))?,
                    proj: candle_nn::linear(2 * c, feature_dim, vb.pp("proj"))?,
                })
            }
        }
    }

    /// `[B, 3, S, S]` normalized pixels to `[B, feature_dim]`.
    pub fn forward(&self, images: &Tensor) -> Result<Tensor> {
        match self {
            ImageEncoder::Resnet(trunk) => Ok(trunk.forward(images)?),
            ImageEncoder::Compact { conv1, conv2, proj } => {
                let x = conv1.forward(images)?.relu()?;
                let x = conv2.forward(&x)?.relu()?;
                let pooled = x.mean(D::Minus1)?.mean(D::Minus1)?;
                Ok(proj.forward(&pooled)?)
            }
        }
    }
}

/// Lowercased alphanumeric word tokens, hashed with 64-bit FNV-1a.
fn hashed_tokens(text: &str, buckets: usize, max_len: usize) -> Vec<u32> {
    // slot 0 is the [CLS] token present in every sequence
    let mut ids = vec![0u32];
    for word in text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .take(max_len.saturating_sub(1))
    {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in word.to_lowercase().bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        ids.push(1 + (h % (buckets as u64 - 1)) as u32);
    }
    ids
}

pub(crate) enum TextEncoder {
    Bert {
        model: Box<BertModel>,
        tokenizer: Box<Tokenizer>,
        max_len: usize,
    },
    Hashed {
        embedding: Embedding,
        proj: Linear,
        buckets: usize,
        max_len: usize,
    },
}

impl TextEncoder {
    pub fn build(
        spec: &TextEncoderSpec,
        feature_dim: usize,
        finetune: bool,
        init: &mut Init<'_>,
    ) -> Result<Self> {
        match spec {
            TextEncoderSpec::Bert {
                weights,
                config,
                tokenizer,
                max_len,
            } => {
                let cfg_text = std::fs::read_to_string(config).map_err(|e| {
                    Error::Config(format!("BERT config {}: {e}", config.display()))
                })?;
                let bert_cfg: BertConfig = serde_json::from_str(&cfg_text)
                    .map_err(|e| Error::Config(format!("{}: {e}", config.display())))?;
                if bert_cfg.hidden_size != feature_dim {
                    return Err(Error::Config(format!(
                        "BERT hidden size {} does not match text_feature_dim {feature_dim}",
                        bert_cfg.hidden_size
                    )));
                }
                let tok = Tokenizer::from_file(tokenizer)
                    .map_err(|e| Error::Config(format!("{}: {e}", tokenizer.display())))?;
                let (vb, expected) = pretrained_builder(
                    weights,
                    "text_encoder",
                    finetune,
                    init.varmap,
                    init.dtype,
                    init.device,
                )?;
                let model = BertModel::load(vb, &bert_cfg)
                    .map_err(|e| Error::Config(format!("{}: {e}", weights.display())))?;
                check_complete(init.varmap, expected, weights)?;
                Ok(TextEncoder::Bert {
                    model: Box::new(model),
                    tokenizer: Box::new(tok),
                    max_len: (*max_len).min(bert_cfg.max_position_embeddings),
                })
            }
            &TextEncoderSpec::Hashed {
                buckets,
                embed_dim,
                max_len,
            } => {
                init.embedding("text_encoder.embedding.weight", buckets, embed_dim)?;
                init.linear("text_encoder.proj", embed_dim, feature_dim)?;
                let vb = VarBuilder::from_varmap(init.varmap, init.dtype, init.device)
                    .pp("text_encoder");
                Ok(TextEncoder::Hashed {
                    embedding: candle_nn::embedding(buckets, embed_dim, vb.pp("embedding"))?,
                    proj: candle_nn::linear(embed_dim, feature_dim, vb.pp("proj"))?,
                    buckets,
                    max_len: max_len.max(1),
                })
            }
        }
    }

    /// One feature row per text.
    pub fn forward(&self, texts: &[String], dtype: DType, device: &Device) -> Result<Tensor> {
        match self {
            TextEncoder::Bert {
                model,
                tokenizer,
                max_len,
            } => {
                let mut rows = Vec::with_capacity(texts.len());
                for t in texts {
                    let enc = tokenizer
                        .encode(t.as_str(), true)
                        .map_err(|e| Error::invalid(format!("tokenizer: {e}")))?;
                    let mut ids = enc.get_ids().to_vec();
                    if ids.len() > *max_len {
                        let sep = *ids.last().expect("nonempty");
                        ids.truncate(max_len - 1);
                        ids.push(sep);
                    }
                    rows.push(ids);
                }
                let width = rows.iter().map(Vec::len).max().unwrap_or(1);
                let mut ids = Vec::with_capacity(rows.len() * width);
                let mut mask = Vec::with_capacity(rows.len() * width);
                for r in &rows {
                    ids.extend(r.iter().copied());
                    ids.extend(std::iter::repeat_n(0u32, width - r.len()));
                    mask.extend(std::iter::repeat_n(1u32, r.len()));
                    mask.extend(std::iter::repeat_n(0u32, width - r.len()));
                }
                let ids = Tensor::from_vec(ids, (rows.len(), width), device)?;
                let mask = Tensor::from_vec(mask, (rows.len(), width), device)?;
                let types = ids.zeros_like()?;
                let hidden = model.forward(&ids, &types, Some(&mask))?;
                // [CLS] is position 0
                Ok(hidden.narrow(1, 0, 1)?.squeeze(1)?)
            }
            TextEncoder::Hashed {
                embedding,
                proj,
                buckets,
                max_len,
            } => {
                let seqs: Vec<Vec<u32>> = texts
                    .iter()
                    .map(|t| hashed_tokens(t, *buckets, *max_len))
                    .collect();
                let total: usize = seqs.iter().map(Vec::len).sum();
                let flat: Vec<u32> = seqs.iter().flatten().copied().collect();
                // mean pooling as a [B, total] averaging matrix
                let mut pool = vec![0f64; texts.len() * total];
                let mut offset = 0;
                for (b, s) in seqs.iter().enumerate() {
                    let w = 1.0 / s.len() as f64;
                    for j in offset..offset + s.len() {
                        pool[b * total + j] = w;
                    }
                    offset += s.len();
                }
                let ids = Tensor::from_vec(flat, total, device)?;
                let pool = Tensor::from_vec(pool, (texts.len(), total), device)?.to_dtype(dtype)?;
                let tokens = embedding.forward(&ids)?;
                let pooled = pool.matmul(&tokens)?;
                Ok(proj.forward(&pooled)?.tanh()?)
            }
        }
    }
}
