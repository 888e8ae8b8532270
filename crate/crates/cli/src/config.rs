//! Run configuration file and the resolved-config record written by every run.

use std::path::{Path, PathBuf};

use anyhow::Context as _;
use realness_core::annotator::{PromptTemplate, ProviderConfig};
use realness_core::dataset::SplitSpec;
use realness_core::dream::{DreamConfig, HeatmapOptions};
use realness_core::embedding::BackendConfig;
use realness_core::regressor::{FusionRegressorConfig, TrainConfig};
use realness_core::{write_atomic, Error};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotatorSection {
    /// Defaults to `<out>/annotation-cache`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub template: PromptTemplate,
    pub concurrency: usize,
    /// Longest image side sent to the provider; larger images are downscaled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_image_side: Option<u32>,
    pub providers: Vec<ProviderConfig>,
}

impl Default for AnnotatorSection {
    fn default() -> Self {
        Self {
            cache_dir: None,
            template: PromptTemplate::default(),
            concurrency: 4,
            max_image_side: None,
            providers: Vec::new(),
        }
    }
}

impl AnnotatorSection {
    /// Looks a provider up by name. `stub` is always available.
    pub fn provider(&self, name: &str) -> Result<ProviderConfig, Error> {
        if let Some(p) = self.providers.iter().find(|p| p.name == name) {
            return Ok(p.clone());
        }
        if name == "stub" {
            return Ok(ProviderConfig::stub());
        }
        let known: Vec<&str> = self.providers.iter().map(|p| p.name.as_str()).collect();
        Err(Error::Config(format!(
            "unknown provider `{name}` (configured: stub{}{})",
            if known.is_empty() { "" } else { ", " },
            known.join(", ")
        )))
    }
}

/// Everything a run can be configured with. Every section is optional.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub dream: DreamConfig,
    pub heatmap: HeatmapOptions,
    pub embedding: BackendConfig,
    /// Defaults to the compact frozen smoke model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<FusionRegressorConfig>,
    pub train: TrainConfig,
    /// Defaults to a seeded holdout of 15% of the manifest.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitSpec>,
    /// Records carved from each training portion for best-epoch selection.
    pub val_count: usize,
    pub annotator: AnnotatorSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn model(&self) -> FusionRegressorConfig {
        self.model.clone().unwrap_or_else(FusionRegressorConfig::compact)
    }

    pub fn split_for(&self, n: usize) -> SplitSpec {
        self.split.clone().unwrap_or(SplitSpec::Holdout {
            test_count: (n * 15 / 100).max(1),
            seed: self.seed,
        })
    }
}

/// Record of how a run was invoked, written to `<out>/run.json`.
#[derive(Debug, Serialize)]
pub struct RunRecord<'a> {
    pub version: &'static str,
    pub command: Vec<String>,
    pub seed: u64,
    pub config: &'a RunConfig,
}

/// Creates the output directory and records the resolved configuration
/// twice: as `run.json` with the command line, and as `config.toml` that can
/// be passed back through `--config` to repeat the run.
pub fn record_run(out: &Path, config: &RunConfig) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_owned(),
        source: e,
    })?;
    let record = RunRecord {
        version: env!("CARGO_PKG_VERSION"),
        command: std::env::args().collect(),
        seed: config.seed,
        config,
    };
    let json = serde_json::to_string_pretty(&record)?;
    write_atomic(&out.join("run.json"), json.as_bytes())?;
    let toml = toml::to_string_pretty(config).context("serializing resolved config")?;
    write_atomic(&out.join("config.toml"), toml.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let mut cfg = RunConfig {
            seed: 9,
            model: Some(FusionRegressorConfig::compact()),
            split: Some(SplitSpec::Kfold {
                k: 5,
                seed: 3,
                test_count: Some(605),
            }),
            val_count: 4,
            ..Default::default()
        };
        cfg.annotator.providers.push(ProviderConfig::stub());
        cfg.train.epochs = 3;
        let text = toml::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(toml::to_string_pretty(&back).unwrap(), text);
        assert_eq!(back.model, cfg.model);
        assert_eq!(back.split, cfg.split);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("sead = 1").is_err());
        let cfg: RunConfig = toml::from_str("seed = 2\n[dream]\nstride = 8\n").unwrap();
        assert_eq!(cfg.dream.stride, 8);
        assert_eq!(cfg.dream.windows, vec![128, 64, 32]);
    }

    #[test]
    fn shipped_configs_parse() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut n = 0;
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                let cfg = RunConfig::load(&path).unwrap_or_else(|e| panic!("{e}"));
                cfg.train.validate().unwrap();
                cfg.model().validate().unwrap();
                cfg.dream.validate().unwrap();
                n += 1;
            }
        }
        assert!(n >= 5);
        let agin = RunConfig::load(&dir.join("agin.toml")).unwrap();
        assert_eq!(
            agin.split,
            Some(SplitSpec::Kfold {
                k: 5,
                seed: 0,
                test_count: Some(605)
            })
        );
        assert_eq!(agin.model().hidden_units, 529);
        assert!(agin.model().finetune_encoders);
        let openai = RunConfig::load(&dir.join("annotate-openai.toml")).unwrap();
        assert_eq!(openai.annotator.provider("gpt-4.1").unwrap().name, "gpt-4.1");
    }

    #[test]
    fn provider_lookup() {
        let a = AnnotatorSection::default();
        assert_eq!(a.provider("stub").unwrap().name, "stub");
        assert!(matches!(a.provider("gpt"), Err(Error::Config(_))));
    }
}
