//! The RISurConv classifier built on `risurconv-core` geometry and the
//! `risurconv-nn` autograd layers, plus a synthetic shape dataset, the
//! rotation train/test protocols, and ablation grids.

pub mod ablation;
pub mod config;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod network;
pub mod synth;
pub mod train;

pub use config::{ClassifierConfig, LayerSpec, RotationSetting, SaFlags, TrainConfig};
pub use error::{ModelError, Result};
pub use eval::{evaluate_protocol, protocol_sweep, Protocol};
pub use network::{Classifier, ShapeRow};
pub use synth::{synth_dataset, ShapeClass, SynthOptions};
pub use train::{train, train_with, EpochRecord, History};
