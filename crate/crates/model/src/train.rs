//! Mini-batch training with rotation augmentation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use risurconv_core::{PointCloud, Rotation, RotationMode};
use risurconv_nn::optim::Adam;
use risurconv_nn::{Graph, Mode};
use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{ModelError, Result};
use crate::geometry::Batch;
use crate::network::{argmax, Classifier};

/// One line of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's samples.
    pub loss: f64,
    /// Fraction of samples classified correctly in training mode.
    pub accuracy: f64,
    /// Rotation applied during training.
    pub mode: String,
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

pub fn labels_of(clouds: &[PointCloud], num_classes: usize) -> Result<Vec<usize>> {
    clouds
        .iter()
        .enumerate()
        .map(|(i, c)| match c.label {
            Some(l) if l < num_classes => Ok(l),
            Some(l) => Err(ModelError::Dataset(format!(
                "cloud {i} has label {l} but the network has {num_classes} classes"
            ))),
            None => Err(ModelError::Dataset(format!("cloud {i} has no label"))),
        })
        .collect()
}

/// Each cloud under an independent rotation drawn from `mode`.
pub fn rotate_all(clouds: &[PointCloud], mode: RotationMode, rng: &mut ChaCha8Rng) -> Vec<PointCloud> {
    clouds
        .iter()
        .map(|c| c.rotated(&Rotation::sample(mode, rng)))
        .collect()
}

/// Splits `order` into batches of `size`; a trailing single sample joins
/// the previous batch because batch statistics need two.
fn batches(order: &[usize], size: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let tail = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").extend(tail);
    }
    out
}

/// Mean cross-entropy of the network on `clouds` in `mode`, without
/// touching any parameter or running statistic.
pub fn batch_loss(net: &Classifier, clouds: &[PointCloud], mode: Mode) -> Result<f32> {
    let labels = labels_of(clouds, net.config().num_classes)?;
    let batch = Batch::assemble(&net.extractor().extract_all(clouds)?)?;
    let mut g = Graph::new(net.store(), mode);
    let logits = net.forward(&mut g, &batch)?;
    let loss = g.cross_entropy(logits, &labels)?;
    Ok(g.value(loss).item())
}

struct StepOutcome {
    loss: f32,
    correct: usize,
}

fn step(
    net: &mut Classifier,
    adam: &mut Adam,
    learning_rate: f32,
    clouds: &[PointCloud],
    epoch: usize,
    index: usize,
) -> Result<StepOutcome> {
    let classes = net.config().num_classes;
    let labels = labels_of(clouds, classes)?;
    let batch = Batch::assemble(&net.extractor().extract_all(clouds)?)?;
    let (loss, correct, grads, updates) = {
        let mut g = Graph::new(net.store(), Mode::Train);
        let logits = net.forward(&mut g, &batch)?;
        let correct = g
            .value(logits)
            .data()
            .chunks(classes)
            .zip(&labels)
            .filter(|(row, &l)| argmax(row) == l)
            .count();
        let loss = g.cross_entropy(logits, &labels)?;
        let value = g.value(loss).item();
        let grads = g.backward(loss)?;
        (value, correct, grads, g.take_buffer_updates())
    };
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteLoss {
            epoch,
            batch: index,
            loss,
            grad_norm: grads.squared_norm().sqrt(),
        });
    }
    adam.step(net.store_mut(), &grads)?;
    if learning_rate > 0.0 {
        for (id, value) in updates {
            net.store_mut().set(id, value)?;
        }
    }
    Ok(StepOutcome { loss, correct })
}

pub fn train(net: &mut Classifier, dataset: &[PointCloud], cfg: &TrainConfig) -> Result<History> {
    train_with(net, dataset, cfg, |_| {})
}

/// Trains with Adam on cross-entropy, calling `on_epoch` after each epoch.
///
/// Every epoch reshuffles the samples and draws a fresh rotation per
/// sample from `cfg.rotation_train`. All randomness comes from `cfg.seed`.
/// A zero learning rate also freezes the normalization running statistics,
/// so the network leaves training exactly as it entered.
pub fn train_with(
    net: &mut Classifier,
    dataset: &[PointCloud],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    if dataset.len() < 2 {
        return Err(ModelError::Dataset(format!(
            "training needs at least 2 clouds, got {}",
            dataset.len()
        )));
    }
    labels_of(dataset, net.config().num_classes)?;
    let mode: RotationMode = cfg.rotation_train.into();
    let hash = net.config().hash();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen) = (0.0f64, 0usize, 0usize);
        for (index, members) in batches(&order, cfg.batch_size).into_iter().enumerate() {
            let picked: Vec<PointCloud> = members.iter().map(|&i| dataset[i].clone()).collect();
            let rotated = rotate_all(&picked, mode, &mut rng);
            let out = step(net, &mut adam, cfg.learning_rate, &rotated, epoch, index)?;
            loss_sum += f64::from(out.loss) * members.len() as f64;
            correct += out.correct;
            seen += members.len();
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / seen as f64,
            accuracy: correct as f64 / seen as f64,
            mode: mode.to_string(),
            config_hash: hash.clone(),
            seed: cfg.seed,
        };
        on_epoch(&record);
        history.records.push(record);
    }
    Ok(history)
}
