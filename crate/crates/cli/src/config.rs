//! The `--config` document. Every section is optional; flags given on the
//! command line take precedence over it.

use std::path::Path;

use anyhow::{bail, Context, Result};
use risurconv_model::{ClassifierConfig, TrainConfig};
use serde::Deserialize;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Named network layout, used when `model` is absent.
    pub preset: Option<String>,
    pub model: Option<ClassifierConfig>,
    pub train: Option<TrainConfig>,
    pub eval: EvalSection,
    pub synth: SynthSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub resamples: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { resamples: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub points: usize,
    pub noise_sigma: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            points: 1024,
            noise_sigma: 0.01,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))
    }

    /// Network layout: the explicit model, else the preset (flag first),
    /// else `toy`. The class count comes from the data.
    pub fn classifier(&self, preset_flag: Option<&str>, num_classes: usize) -> Result<ClassifierConfig> {
        if let Some(model) = &self.model {
            if preset_flag.is_some() {
                bail!("--preset conflicts with the model section of the config");
            }
            if model.num_classes != num_classes {
                bail!(
                    "config model has {} classes but the data has {num_classes}",
                    model.num_classes
                );
            }
            return Ok(model.clone());
        }
        let name = preset_flag.or(self.preset.as_deref()).unwrap_or("toy");
        Ok(ClassifierConfig::preset(name, num_classes)?)
    }

    pub fn train(&self) -> TrainConfig {
        self.train.clone().unwrap_or_default()
    }
}
