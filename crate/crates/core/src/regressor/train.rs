use std::sync::Arc;
use std::time::Instant;

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::inputs::{prepare_inputs, Augmentation, ImageInput, ModelInput, Sample};
use super::model::{FusionRegressor, TargetScale};
use super::AblationMode;
use crate::error::{Error, Result};
use crate::metrics::{EvalReport, SamplePrediction};

const FEATURE_CHUNK: usize = 32;
// decorrelates the shuffle/augmentation stream from weight init
const DATA_STREAM: u64 = 0x5eed_da7a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetScaling {
    /// Regress MOS on its own scale.
    #[default]
    Native,
    /// Regress MOS min-max scaled to `[0, 1]` over the training set.
    MinMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub augmentation: Augmentation,
    pub target_scaling: TargetScaling,
    /// Keep the weights from the epoch with the best validation SROCC.
    pub keep_best: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            augmentation: Augmentation::FlipCrop { min_area: 0.5 },
            target_scaling: TargetScaling::Native,
            keep_best: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.eps > 0.0) {
            return Err(Error::Config("weight_decay must be >= 0 and eps > 0".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if let Augmentation::FlipCrop { min_area } = self.augmentation {
            if !(min_area > 0.0 && min_area <= 1.0) {
                return Err(Error::Config("augmentation min_area must lie in (0, 1]".into()));
            }
        }
        Ok(())
    }

    fn adamw(&self) -> ParamsAdamW {
        ParamsAdamW {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One epoch. Losses are MSE in target units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_srocc: Option<f64>,
    pub val_plcc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Full-train-set MSE before the first update, without augmentation.
    pub initial_train_loss: f64,
    /// Full-train-set MSE of the returned weights, without augmentation.
    pub final_train_loss: f64,
    pub epochs: Vec<EpochRecord>,
    /// Wall-clock seconds per epoch. Kept apart from the records so that
    /// seeded reruns produce identical record streams.
    pub epoch_seconds: Vec<f64>,
    /// Epoch whose weights were kept when selecting on validation SROCC.
    pub best_epoch: Option<usize>,
}

impl TrainHistory {
    pub fn records_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("epoch record serializes") + "\n")
            .collect()
    }
}

/// Mean squared error of a prediction tensor against targets, as a scalar
/// tensor.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    Ok(pred.sub(target)?.sqr()?.mean_all()?)
}

/// A single optimizer over a model's trainable variables.
pub struct Trainer<'m> {
    model: &'m FusionRegressor,
    opt: AdamW,
}

impl<'m> Trainer<'m> {
    /// Unlike [`TrainConfig::validate`], a zero learning rate is accepted so
    /// that the no-op step can be checked.
    pub fn new(model: &'m FusionRegressor, config: &TrainConfig) -> Result<Self> {
        let opt = AdamW::new(model.trainable_vars(), config.adamw())?;
        Ok(Self { model, opt })
    }

    /// One update on precomputed features. Returns the batch loss before the
    /// update.
    pub fn step_features(&mut self, features: &Tensor, targets: &Tensor) -> Result<f64> {
        let pred = self.model.forward_features(features)?;
        let loss = mse(&pred, targets)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(Error::NonFinite("batch loss".into()));
        }
        self.opt.backward_step(&loss)?;
        Ok(value)
    }

    pub fn step(&mut self, inputs: &[ModelInput], targets: &Tensor) -> Result<f64> {
        let features = self.model.encode_features(inputs)?;
        self.step_features(&features, targets)
    }
}

fn targets_tensor(model: &FusionRegressor, samples: &[&Sample]) -> Result<Tensor> {
    let scale = model.target_scale();
    let t: Vec<f64> = samples.iter().map(|s| scale.to_target(s.mos)).collect();
    Ok(Tensor::from_vec(t, samples.len(), model.device())?.to_dtype(model.dtype())?)
}

fn features_for(model: &FusionRegressor, samples: &[Sample], mode: AblationMode) -> Result<Tensor> {
    let mut parts = Vec::new();
    for chunk in samples.chunks(FEATURE_CHUNK) {
        let inputs: Vec<ModelInput> = chunk.iter().map(|s| prepare_inputs(s, mode)).collect();
        parts.push(model.encode_features(&inputs)?.detach());
    }
    Ok(Tensor::cat(&parts, 0)?)
}

/// MSE in target units over `samples`, inference mode.
pub fn dataset_loss(model: &FusionRegressor, samples: &[Sample], mode: AblationMode) -> Result<f64> {
    let preds = model.predict_batch(samples, mode)?;
    let scale = model.target_scale();
    let sum: f64 = preds
        .iter()
        .zip(samples)
        .map(|(p, s)| (scale.to_target(*p) - scale.to_target(s.mos)).powi(2))
        .sum();
    Ok(sum / samples.len() as f64)
}

/// Predicts every sample and scores the predictions against MOS.
pub fn evaluate(
    model: &FusionRegressor,
    samples: &[Sample],
    mode: AblationMode,
    split: &str,
) -> Result<EvalReport> {
    let preds = model.predict_batch(samples, mode)?;
    let rows = samples
        .iter()
        .zip(preds)
        .map(|(s, prediction)| SamplePrediction {
            id: s.id.clone(),
            mos: s.mos,
            prediction,
        })
        .collect();
    EvalReport::from_predictions(split, rows)
}

pub fn train(
    model: &mut FusionRegressor,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
    mode: AblationMode,
) -> Result<TrainHistory> {
    train_with_observer(model, train_set, val_set, config, mode, |_, _| {})
}

/// Trains with MSE and AdamW. `observer` sees every finished epoch and its
/// wall-clock duration, so callers can persist progress before a later
/// epoch aborts.
pub fn train_with_observer(
    model: &mut FusionRegressor,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &TrainConfig,
    mode: AblationMode,
    mut observer: impl FnMut(&EpochRecord, f64),
) -> Result<TrainHistory> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    for s in train_set.iter().chain(val_set) {
        if !s.mos.is_finite() {
            return Err(Error::invalid(format!("sample `{}` has non-finite mos", s.id)));
        }
    }
    let mos: Vec<f64> = train_set.iter().map(|s| s.mos).collect();
    model.set_target_scale(match config.target_scaling {
        TargetScaling::Native => TargetScale::IDENTITY,
        TargetScaling::MinMax => TargetScale::min_max(&mos),
    });
    let model = &*model;
    let initial_train_loss = dataset_loss(model, train_set, mode)?;

    let cached = if model.encoders_frozen() && config.augmentation == Augmentation::None {
        Some(features_for(model, train_set, mode)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ DATA_STREAM);
    let mut trainer = Trainer::new(model, config)?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut epoch_seconds = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<(String, Tensor)>)> = None;

    for epoch in 0..config.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
            let targets = targets_tensor(model, &batch)?;
            let result = match &cached {
                Some(all) => {
                    let ids: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
                    let ids = Tensor::from_vec(ids, idx.len(), model.device())?;
                    trainer.step_features(&all.index_select(&ids, 0)?, &targets)
                }
                None => {
                    let inputs: Vec<ModelInput> = batch
                        .iter()
                        .map(|s| {
                            let mut input = prepare_inputs(s, mode);
                            if let ImageInput::Pixels(img) = &input.image {
                                let aug = config.augmentation.apply(img, &mut rng);
                                input.image = ImageInput::Pixels(Arc::new(aug));
                            }
                            input
                        })
                        .collect();
                    trainer.step(&inputs, &targets)
                }
            };
            match result {
                Ok(l) => loss_sum += l * idx.len() as f64,
                Err(Error::NonFinite(_)) => {
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                Err(e) => return Err(e),
            }
        }
        let mut record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss: None,
            val_srocc: None,
            val_plcc: None,
        };
        if !val_set.is_empty() {
            record.val_loss = Some(dataset_loss(model, val_set, mode)?);
            if let Ok(report) = evaluate(model, val_set, mode, "val") {
                record.val_srocc = Some(report.srocc);
                record.val_plcc = Some(report.plcc);
            }
        }
        if config.keep_best {
            if let Some(s) = record.val_srocc {
                if best.as_ref().is_none_or(|(_, b, _)| s > *b) {
                    best = Some((epoch, s, model.snapshot()?));
                }
            }
        }
        let seconds = start.elapsed().as_secs_f64();
        observer(&record, seconds);
        epochs.push(record);
        epoch_seconds.push(seconds);
    }

    let best_epoch = match best {
        Some((epoch, _, snapshot)) => {
            model.restore(&snapshot)?;
            Some(epoch)
        }
        None => None,
    };
    let final_train_loss = dataset_loss(model, train_set, mode)?;
    tracing::info!(initial_train_loss, final_train_loss, ?best_epoch, "training finished");
    Ok(TrainHistory {
        initial_train_loss,
        final_train_loss,
        epochs,
        epoch_seconds,
        best_epoch,
    })
}
