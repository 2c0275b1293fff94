//! JSON configuration for the classifier and its training run.

use std::path::Path;

use risurconv_core::risp::{descriptor_registry, DescriptorOptions, SurfaceDescriptor};
use risurconv_core::RotationMode;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ModelError, Result};

/// One RISurConv layer: `points` reference points, each with `neighbors`
/// neighbors drawn from the previous layer's reference set, producing
/// `channels` features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub points: usize,
    pub neighbors: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaFlags {
    pub sa1: bool,
    pub sa2: bool,
    pub encoder: bool,
}

impl SaFlags {
    pub const ALL: SaFlags = SaFlags {
        sa1: true,
        sa2: true,
        encoder: true,
    };
    pub const NONE: SaFlags = SaFlags {
        sa1: false,
        sa2: false,
        encoder: false,
    };
}

impl Default for SaFlags {
    fn default() -> Self {
        Self::ALL
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub layers: Vec<LayerSpec>,
    pub encoder_heads: usize,
    pub fc_widths: Vec<usize>,
    pub num_classes: usize,
    /// Name in the descriptor registry.
    pub risp_variant: String,
    /// Triangles per neighbor, 1 to 4.
    pub surfaces: usize,
    #[serde(default)]
    pub sa_flags: SaFlags,
    /// Bias terms in the Q/K/V projections of SA1 and SA2.
    #[serde(default)]
    pub attention_bias: bool,
    /// Residual connection around SA1 and SA2.
    #[serde(default)]
    pub attention_residual: bool,
    /// Re-estimate normals on every downsampled reference set instead of
    /// carrying the input normals along.
    #[serde(default)]
    pub reestimate_normals: bool,
}

impl ClassifierConfig {
    /// Five layers at 1024/512/256/128/1 points and 32…512 channels, K = 8,
    /// a global last layer over all 128 previous points, an 8-head encoder,
    /// and FC 256 → 128.
    pub fn paper(num_classes: usize) -> Self {
        Self::scaled(num_classes, 1)
    }

    /// The [`paper`](Self::paper) layout with every point count and width divided by 4.
    pub fn toy(num_classes: usize) -> Self {
        Self::scaled(num_classes, 4)
    }

    fn scaled(num_classes: usize, div: usize) -> Self {
        let local = [(1024, 32), (512, 64), (256, 128), (128, 256)];
        let mut layers: Vec<LayerSpec> = local
            .iter()
            .map(|&(n, c)| LayerSpec {
                points: n / div,
                neighbors: 8,
                channels: c / div,
            })
            .collect();
        layers.push(LayerSpec {
            points: 1,
            neighbors: 128 / div - 1,
            channels: 512 / div,
        });
        Self {
            layers,
            encoder_heads: 8,
            fc_widths: vec![256 / div, 128 / div],
            num_classes,
            risp_variant: "standard-14".into(),
            surfaces: 2,
            sa_flags: SaFlags::ALL,
            attention_bias: false,
            attention_residual: false,
            reestimate_normals: false,
        }
    }

    pub fn preset(name: &str, num_classes: usize) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper(num_classes)),
            "toy" => Ok(Self::toy(num_classes)),
            other => Err(ModelError::Config(format!("unknown preset '{other}' (expected paper, toy)"))),
        }
    }

    pub fn descriptor(&self) -> Result<Box<dyn SurfaceDescriptor>> {
        Ok(descriptor_registry().create(
            &self.risp_variant,
            &DescriptorOptions {
                surfaces: self.surfaces,
            },
        )?)
    }

    /// Width of the feature leaving the last RISurConv layer.
    pub fn feature_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.channels)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.layers.is_empty() {
            return bad("at least one layer is required".into());
        }
        let descriptor = self.descriptor()?;
        let last = self.layers.len() - 1;
        if self.layers[last].points != 1 {
            return bad(format!(
                "the last layer must reduce to a single global point, got {}",
                self.layers[last].points
            ));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.points == 0 || l.channels == 0 {
                return bad(format!("layer {i}: points and channels must be positive"));
            }
            if l.neighbors < descriptor.min_neighbors() {
                return bad(format!(
                    "layer {i}: {} neighbors, descriptor '{}' needs at least {}",
                    l.neighbors,
                    self.risp_variant,
                    descriptor.min_neighbors()
                ));
            }
            if i == 0 {
                continue;
            }
            let prev = self.layers[i - 1];
            if l.points >= prev.points {
                return bad(format!("layer {i}: points must decrease ({} after {})", l.points, prev.points));
            }
            if l.neighbors >= prev.points {
                return bad(format!(
                    "layer {i}: {} neighbors out of {} previous points",
                    l.neighbors, prev.points
                ));
            }
            let grows = if i == last {
                l.channels >= prev.channels
            } else {
                l.channels > prev.channels
            };
            if !grows {
                return bad(format!(
                    "layer {i}: channels must increase ({} after {})",
                    l.channels, prev.channels
                ));
            }
        }
        if self.sa_flags.encoder
            && (self.encoder_heads == 0 || !self.feature_width().is_multiple_of(self.encoder_heads))
        {
            return bad(format!(
                "encoder width {} is not divisible by {} heads",
                self.feature_width(),
                self.encoder_heads
            ));
        }
        if self.fc_widths.contains(&0) {
            return bad("fc widths must be positive".into());
        }
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        Ok(())
    }

    /// Points the input cloud should have so the first layer needs no padding.
    pub fn input_points(&self) -> usize {
        self.layers.first().map_or(0, |l| l.points)
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// Rotation applied to clouds before they enter the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationSetting {
    None,
    Z,
    So3,
}

impl From<RotationSetting> for RotationMode {
    fn from(r: RotationSetting) -> Self {
        match r {
            RotationSetting::None => RotationMode::None,
            RotationSetting::Z => RotationMode::Z,
            RotationSetting::So3 => RotationMode::So3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub rotation_train: RotationSetting,
    pub rotation_test: RotationSetting,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 60,
            batch_size: 16,
            rotation_train: RotationSetting::Z,
            rotation_test: RotationSetting::So3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(ModelError::Config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(ModelError::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(ModelError::Config(format!(
                "batch size must be at least 2 for batch statistics, got {}",
                self.batch_size
            )));
        }
        Ok(())
    }
}

/// First 16 hex digits of the SHA-256 of the compact JSON encoding.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&json)
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
