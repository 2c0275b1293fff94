//! Accuracy under the train/test rotation protocols.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use risurconv_core::{PointCloud, RotationMode};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::network::Classifier;
use crate::train::{labels_of, rotate_all};

/// Training and testing rotation distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "z/z")]
    ZZ,
    #[serde(rename = "so3/so3")]
    So3So3,
    #[serde(rename = "z/so3")]
    ZSo3,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::ZZ, Protocol::So3So3, Protocol::ZSo3];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::ZZ => "z/z",
            Protocol::So3So3 => "so3/so3",
            Protocol::ZSo3 => "z/so3",
        }
    }

    pub fn train_rotation(self) -> RotationMode {
        match self {
            Protocol::ZZ | Protocol::ZSo3 => RotationMode::Z,
            Protocol::So3So3 => RotationMode::So3,
        }
    }

    pub fn test_rotation(self) -> RotationMode {
        match self {
            Protocol::ZZ => RotationMode::Z,
            Protocol::So3So3 | Protocol::ZSo3 => RotationMode::So3,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = ModelError;

    /// Accepts `z/z` or `zz` style names, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('/', "").as_str() {
            "zz" => Ok(Protocol::ZZ),
            "so3so3" => Ok(Protocol::So3So3),
            "zso3" => Ok(Protocol::ZSo3),
            _ => Err(ModelError::Config(format!(
                "unknown protocol '{s}' (expected zz, so3so3, zso3)"
            ))),
        }
    }
}

/// Fraction of `dataset` classified correctly after rotating every cloud
/// independently by a draw from `rotation`.
pub fn accuracy(net: &Classifier, dataset: &[PointCloud], rotation: RotationMode, seed: u64) -> Result<f64> {
    if dataset.is_empty() {
        return Err(ModelError::Dataset("cannot evaluate an empty dataset".into()));
    }
    let labels = labels_of(dataset, net.config().num_classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rotated = rotate_all(dataset, rotation, &mut rng);
    let predicted = net.predict(&rotated)?;
    let correct = predicted.iter().zip(&labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / dataset.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub protocol: Protocol,
    /// One accuracy per rotation resample.
    pub accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over the resamples.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSweep {
    pub results: Vec<ProtocolResult>,
    /// Population standard deviation of the per-protocol means.
    pub std_across: f64,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Test accuracy of a trained network under `protocol`'s test rotations,
/// repeated for `resamples` independent rotation draws.
pub fn evaluate_protocol(
    net: &Classifier,
    dataset: &[PointCloud],
    protocol: Protocol,
    resamples: usize,
    seed: u64,
) -> Result<ProtocolResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let accuracies = (0..resamples.max(1))
        .map(|_| accuracy(net, dataset, protocol.test_rotation(), rng.random()))
        .collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&accuracies);
    Ok(ProtocolResult {
        protocol,
        accuracies,
        mean,
        std,
    })
}

/// All three protocols on one network, each with its own rotation stream.
pub fn protocol_sweep(net: &Classifier, dataset: &[PointCloud], resamples: usize, seed: u64) -> Result<ProtocolSweep> {
    let results = Protocol::ALL
        .iter()
        .enumerate()
        .map(|(i, &p)| evaluate_protocol(net, dataset, p, resamples, seed.wrapping_add(i as u64 + 1)))
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = results.iter().map(|r| r.mean).collect();
    Ok(ProtocolSweep {
        std_across: mean_std(&means).1,
        results,
    })
}
