//! Grids of classifier variants trained and scored under one protocol.

use risurconv_core::PointCloud;
use serde::{Deserialize, Serialize};

use crate::config::{ClassifierConfig, SaFlags, TrainConfig};
use crate::error::{ModelError, Result};
use crate::eval::{evaluate_protocol, Protocol};
use crate::network::Classifier;
use crate::train::train;

/// One configuration in a study.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRun {
    pub study: &'static str,
    pub model: String,
    pub config: ClassifierConfig,
}

/// One line of the ablation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub study: String,
    pub model: String,
    pub risp_variant: String,
    pub surfaces: usize,
    pub sa1: bool,
    pub sa2: bool,
    pub encoder: bool,
    pub config_hash: String,
    pub seed: u64,
    pub protocol: Protocol,
    pub train_accuracy: f64,
    /// Mean test accuracy over the rotation resamples.
    pub accuracy: f64,
}

/// Descriptor components: all 14, no distance, angles only, distance and
/// φ only, and the 16-column extension.
pub fn descriptor_grid(base: &ClassifierConfig) -> Vec<AblationRun> {
    [
        ("A", "standard-14"),
        ("B", "distance-off"),
        ("C", "angles-only"),
        ("D", "euclid-only"),
        ("E", "extended-16"),
    ]
    .into_iter()
    .map(|(model, variant)| {
        let mut config = base.clone();
        config.risp_variant = variant.into();
        config.surfaces = 2;
        AblationRun {
            study: "descriptor",
            model: model.into(),
            config,
        }
    })
    .collect()
}

/// Attention switches: all on, each one off, all off.
pub fn attention_grid(base: &ClassifierConfig) -> Vec<AblationRun> {
    let flags = |sa1, sa2, encoder| SaFlags { sa1, sa2, encoder };
    [
        ("A", flags(true, true, true)),
        ("B", flags(false, true, true)),
        ("C", flags(true, false, true)),
        ("D", flags(true, true, false)),
        ("E", SaFlags::NONE),
    ]
    .into_iter()
    .map(|(model, sa_flags)| {
        let mut config = base.clone();
        config.sa_flags = sa_flags;
        AblationRun {
            study: "attention",
            model: model.into(),
            config,
        }
    })
    .collect()
}

/// One to four triangles per neighbor with the standard descriptor.
pub fn surfaces_grid(base: &ClassifierConfig) -> Vec<AblationRun> {
    (1..=4)
        .map(|surfaces| {
            let mut config = base.clone();
            config.risp_variant = "standard-14".into();
            config.surfaces = surfaces;
            AblationRun {
                study: "surfaces",
                model: format!("surfaces-{surfaces}"),
                config,
            }
        })
        .collect()
}

pub fn study_grid(name: &str, base: &ClassifierConfig) -> Result<Vec<AblationRun>> {
    match name {
        "descriptor" => Ok(descriptor_grid(base)),
        "attention" => Ok(attention_grid(base)),
        "surfaces" => Ok(surfaces_grid(base)),
        "all" => Ok([descriptor_grid(base), attention_grid(base), surfaces_grid(base)].concat()),
        other => Err(ModelError::Config(format!(
            "unknown study '{other}' (expected descriptor, attention, surfaces, all)"
        ))),
    }
}

/// Trains every run from scratch with `train_cfg` and scores it on `test`
/// under `protocol`, calling `on_row` as each run finishes.
pub fn ablation_sweep(
    runs: &[AblationRun],
    train_set: &[PointCloud],
    test_set: &[PointCloud],
    train_cfg: &TrainConfig,
    protocol: Protocol,
    resamples: usize,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut cfg = train_cfg.clone();
    cfg.rotation_train = match protocol.train_rotation() {
        risurconv_core::RotationMode::So3 => crate::config::RotationSetting::So3,
        _ => crate::config::RotationSetting::Z,
    };
    let mut rows = Vec::with_capacity(runs.len());
    for run in runs {
        let mut net = Classifier::new(run.config.clone(), cfg.seed)?;
        let history = train(&mut net, train_set, &cfg)?;
        let result = evaluate_protocol(&net, test_set, protocol, resamples, cfg.seed)?;
        let row = AblationRow {
            study: run.study.into(),
            model: run.model.clone(),
            risp_variant: run.config.risp_variant.clone(),
            surfaces: run.config.surfaces,
            sa1: run.config.sa_flags.sa1,
            sa2: run.config.sa_flags.sa2,
            encoder: run.config.sa_flags.encoder,
            config_hash: run.config.hash(),
            seed: cfg.seed,
            protocol,
            train_accuracy: history.last().map_or(0.0, |r| r.accuracy),
            accuracy: result.mean,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}
