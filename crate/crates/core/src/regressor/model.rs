use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Module, Tensor, Var};
use candle_nn::{Linear, VarBuilder, VarMap};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{FusionRegressorConfig, HeadActivation};
use super::encoders::{ImageEncoder, Init, TextEncoder};
use super::inputs::{image_to_chw, prepare_inputs, ImageInput, ModelInput, Sample};
use super::AblationMode;
use crate::error::{Error, Result};

const WEIGHTS_FILE: &str = "model.safetensors";
const META_FILE: &str = "model.json";
const CHECKPOINT_FORMAT: u32 = 1;
const PREDICT_CHUNK: usize = 32;

/// Affine map between MOS and the regression target:
/// `target = (mos - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScale {
    pub offset: f64,
    pub scale: f64,
}

impl Default for TargetScale {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl TargetScale {
    pub const IDENTITY: TargetScale = TargetScale {
        offset: 0.0,
        scale: 1.0,
    };

    /// Maps the observed MOS range onto `[0, 1]`. A constant range falls back
    /// to a pure shift.
    pub fn min_max(mos: &[f64]) -> Self {
        let lo = mos.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = mos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = if hi > lo { hi - lo } else { 1.0 };
        TargetScale { offset: lo, scale }
    }

    pub fn to_target(&self, mos: f64) -> f64 {
        (mos - self.offset) / self.scale
    }

    pub fn to_mos(&self, target: f64) -> f64 {
        target * self.scale + self.offset
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    format: u32,
    seed: u64,
    target_scale: TargetScale,
    config: FusionRegressorConfig,
}

/// Image encoder and text encoder feeding a concatenation, one hidden fully
/// connected layer and a scalar output.
pub struct FusionRegressor {
    config: FusionRegressorConfig,
    seed: u64,
    varmap: VarMap,
    image_encoder: ImageEncoder,
    text_encoder: TextEncoder,
    fc1: Linear,
    out: Linear,
    dtype: DType,
    device: Device,
    target_scale: TargetScale,
}

impl std::fmt::Debug for FusionRegressor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FusionRegressor")
            .field("config", &self.config)
            .field("seed", &self.seed)
            .field("target_scale", &self.target_scale)
            .finish_non_exhaustive()
    }
}

/// Builds a regressor. `seed` fixes every randomly initialized weight.
pub fn build_model(config: &FusionRegressorConfig, seed: u64) -> Result<FusionRegressor> {
    config.validate()?;
    let device = Device::Cpu;
    let dtype = config.precision.dtype();
    let varmap = VarMap::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = Init {
        varmap: &varmap,
        rng: &mut rng,
        dtype,
        device: &device,
    };
    let image_encoder = ImageEncoder::build(
        &config.image_encoder,
        config.image_feature_dim,
        config.finetune_encoders,
        &mut init,
    )?;
    let text_encoder = TextEncoder::build(
        &config.text_encoder,
        config.text_feature_dim,
        config.finetune_encoders,
        &mut init,
    )?;
    init.linear("head.fc1", config.concat_dim(), config.hidden_units)?;
    init.linear("head.out", config.hidden_units, config.output_dim)?;
    let vb = VarBuilder::from_varmap(&varmap, dtype, &device).pp("head");
    let fc1 = candle_nn::linear(config.concat_dim(), config.hidden_units, vb.pp("fc1"))?;
    let out = candle_nn::linear(config.hidden_units, config.output_dim, vb.pp("out"))?;
    Ok(FusionRegressor {
        config: config.clone(),
        seed,
        varmap,
        image_encoder,
        text_encoder,
        fc1,
        out,
        dtype,
        device,
        target_scale: TargetScale::IDENTITY,
    })
}

impl FusionRegressor {
    pub fn config(&self) -> &FusionRegressorConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn target_scale(&self) -> TargetScale {
        self.target_scale
    }

    pub fn set_target_scale(&mut self, scale: TargetScale) {
        self.target_scale = scale;
    }

    /// Whether encoder outputs depend only on the input, so features can be
    /// computed once and reused.
    pub fn encoders_frozen(&self) -> bool {
        !self.config.finetune_encoders
    }

    /// Weights of the fusion head, in order fc1.weight, fc1.bias, out.weight,
    /// out.bias.
    pub fn head_vars(&self) -> Vec<Var> {
        let data = self.varmap.data().lock().expect("varmap lock");
        ["head.fc1.weight", "head.fc1.bias", "head.out.weight", "head.out.bias"]
            .iter()
            .map(|k| data[*k].clone())
            .collect()
    }

    /// Variables the optimizer updates, sorted by name so optimizer state is
    /// laid out identically across runs. Batch-norm running statistics are
    /// buffers, not parameters.
    pub fn trainable_vars(&self) -> Vec<Var> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut named: Vec<(&String, &Var)> = data
            .iter()
            .filter(|(k, _)| !k.ends_with("running_mean") && !k.ends_with("running_var"))
            .filter(|(k, _)| self.config.finetune_encoders || k.starts_with("head."))
            .collect();
        named.sort_by(|a, b| a.0.cmp(b.0));
        named.into_iter().map(|(_, v)| v.clone()).collect()
    }

    /// Copies of every variable, keyed by name.
    pub fn snapshot(&self) -> Result<Vec<(String, Tensor)>> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let mut out = data
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect::<Result<Vec<_>>>()?;
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(out)
    }

    pub fn restore(&self, snapshot: &[(String, Tensor)]) -> Result<()> {
        let data = self.varmap.data().lock().expect("varmap lock");
        for (k, t) in snapshot {
            let var = data
                .get(k)
                .ok_or_else(|| Error::invalid(format!("snapshot has unknown variable `{k}`")))?;
            var.set(t)?;
        }
        Ok(())
    }

    fn image_batch(&self, inputs: &[ModelInput]) -> Result<Tensor> {
        let side = self.config.image_encoder.input_size();
        let n = 3 * side * side;
        let mut flat = Vec::with_capacity(inputs.len() * n);
        for input in inputs {
            match &input.image {
                ImageInput::Pixels(img) => flat.extend(image_to_chw(img, side)),
                ImageInput::Zeros => flat.extend(std::iter::repeat_n(0f32, n)),
            }
        }
        let t = Tensor::from_vec(flat, (inputs.len(), 3, side, side), &self.device)?;
        Ok(t.to_dtype(self.dtype)?)
    }

    /// Concatenated `[B, image_feature_dim + text_feature_dim]` features.
    /// Detached from the graph when encoders are frozen.
    pub fn encode_features(&self, inputs: &[ModelInput]) -> Result<Tensor> {
        if inputs.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let images = self.image_batch(inputs)?;
        let img = self.image_encoder.forward(&images)?;
        let texts: Vec<String> = inputs.iter().map(|i| i.text.clone()).collect();
        let txt = self.text_encoder.forward(&texts, self.dtype, &self.device)?;
        let (b, di) = img.dims2()?;
        let (bt, dt) = txt.dims2()?;
        if b != inputs.len() || bt != inputs.len() {
            return Err(Error::invalid("encoder returned wrong batch size"));
        }
        if di != self.config.image_feature_dim || dt != self.config.text_feature_dim {
            return Err(Error::Config(format!(
                "encoders emit {di}+{dt} features, config expects {}+{}",
                self.config.image_feature_dim, self.config.text_feature_dim
            )));
        }
        let features = Tensor::cat(&[&img, &txt], 1)?;
        Ok(if self.encoders_frozen() {
            features.detach()
        } else {
            features
        })
    }

    /// Fusion head on precomputed features: `[B, concat_dim]` to `[B]`, in
    /// target units.
    pub fn forward_features(&self, features: &Tensor) -> Result<Tensor> {
        let h = self.fc1.forward(features)?;
        let h = match self.config.head_activation {
            HeadActivation::Relu => h.relu()?,
            HeadActivation::Gelu => h.gelu_erf()?,
            HeadActivation::Tanh => h.tanh()?,
            HeadActivation::Identity => h,
        };
        Ok(self.out.forward(&h)?.squeeze(1)?)
    }

    /// End-to-end forward pass in target units.
    pub fn forward(&self, inputs: &[ModelInput]) -> Result<Tensor> {
        self.forward_features(&self.encode_features(inputs)?)
    }

    /// Predictions on the MOS scale for prepared inputs, in order.
    pub fn predict_inputs(&self, inputs: &[ModelInput]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(PREDICT_CHUNK) {
            let y = self.forward(chunk)?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            for v in y {
                if !v.is_finite() {
                    return Err(Error::NonFinite("regressor prediction".into()));
                }
                out.push(self.target_scale.to_mos(v));
            }
        }
        Ok(out)
    }

    pub fn predict(&self, sample: &Sample, mode: AblationMode) -> Result<f64> {
        Ok(self.predict_inputs(&[prepare_inputs(sample, mode)])?[0])
    }

    pub fn predict_batch(&self, samples: &[Sample], mode: AblationMode) -> Result<Vec<f64>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let inputs: Vec<ModelInput> = samples.iter().map(|s| prepare_inputs(s, mode)).collect();
        self.predict_inputs(&inputs)
    }

    /// Writes `model.safetensors` and `model.json` into `dir`. Frozen
    /// pretrained encoders are not copied; the config keeps their paths.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        self.varmap.save(tmp.path())?;
        let weights = dir.join(WEIGHTS_FILE);
        tmp.persist(&weights).map_err(|e| Error::io(&weights, e.error))?;
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT,
            seed: self.seed,
            target_scale: self.target_scale,
            config: self.config.clone(),
        };
        crate::fsutil::write_atomic(&dir.join(META_FILE), &serde_json::to_vec_pretty(&meta)?)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta_path = dir.join(META_FILE);
        let weights = dir.join(WEIGHTS_FILE);
        if !meta_path.is_file() || !weights.is_file() {
            return Err(Error::Config(format!(
                "no checkpoint in {} (need {META_FILE} and {WEIGHTS_FILE})",
                dir.display()
            )));
        }
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", meta_path.display())))?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!(
                "{}: unsupported checkpoint format {}",
                meta_path.display(),
                meta.format
            )));
        }
        let mut model = build_model(&meta.config, meta.seed)?;
        model
            .varmap
            .load(&weights)
            .map_err(|e| Error::Config(format!("{}: {e}", weights.display())))?;
        model.target_scale = meta.target_scale;
        Ok(model)
    }

    pub fn checkpoint_files(dir: &Path) -> [PathBuf; 2] {
        [dir.join(WEIGHTS_FILE), dir.join(META_FILE)]
    }
}
