//! The RISurConv classification network.

use std::fmt;
use std::io::{BufRead, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use risurconv_core::PointCloud;
use risurconv_nn::checkpoint::{read_checkpoint, write_checkpoint};
use risurconv_nn::layers::{AttentionOptions, Dense, Init, RisurConv, RisurConvSpec, SharedMlp, TransformerEncoder};
use risurconv_nn::{Graph, Mode, ParamStore, Var};

use crate::config::ClassifierConfig;
use crate::error::{ModelError, Result};
use crate::geometry::{Batch, FeatureExtractor};

/// Clouds per forward pass when only logits are needed.
pub const INFERENCE_BATCH: usize = 32;

/// Output of one stage, as `dims × points`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeRow {
    pub stage: String,
    pub dims: usize,
    pub points: usize,
}

impl fmt::Display for ShapeRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<12} {}×{}", self.stage, self.dims, self.points)
    }
}

#[derive(Debug)]
pub struct Classifier {
    config: ClassifierConfig,
    store: ParamStore,
    extractor: FeatureExtractor,
    convs: Vec<RisurConv>,
    encoder: Option<TransformerEncoder>,
    head: Vec<SharedMlp>,
    output: Dense,
}

impl Classifier {
    /// Builds the network with parameters drawn from `seed`.
    ///
    /// Each RISurConv layer embeds descriptors at its own output width, so
    /// the embedding and fused widths coincide.
    pub fn new(config: ClassifierConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let extractor = FeatureExtractor::new(&config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let attention = AttentionOptions {
            bias: config.attention_bias,
            residual: config.attention_residual,
        };
        let mut convs = Vec::with_capacity(config.layers.len());
        let mut prev = 0;
        for (l, spec) in config.layers.iter().enumerate() {
            let conv_spec = RisurConvSpec {
                in_features: extractor.columns(),
                prev_channels: prev,
                embed_channels: spec.channels,
                out_channels: spec.channels,
                sa1: config.sa_flags.sa1,
                sa2: config.sa_flags.sa2,
                attention,
            };
            convs.push(RisurConv::new(&mut store, &format!("conv{}", l + 1), conv_spec, &mut rng));
            prev = spec.channels;
        }
        let width = config.feature_width();
        let encoder = if config.sa_flags.encoder {
            Some(TransformerEncoder::new(&mut store, "encoder", width, config.encoder_heads, &mut rng)?)
        } else {
            None
        };
        let mut head = Vec::with_capacity(config.fc_widths.len());
        let mut fan_in = width;
        for (i, &w) in config.fc_widths.iter().enumerate() {
            head.push(SharedMlp::new(&mut store, &format!("fc{}", i + 1), fan_in, w, &mut rng));
            fan_in = w;
        }
        let output = Dense::new(
            &mut store,
            "logits",
            fan_in,
            config.num_classes,
            true,
            Init::KaimingUniform,
            &mut rng,
        );
        Ok(Self {
            config,
            store,
            extractor,
            convs,
            encoder,
            head,
            output,
        })
    }

    pub fn config(&self) -> &ClassifierConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    /// Logits `[B, num_classes]` for a batch.
    pub fn forward(&self, g: &mut Graph, batch: &Batch) -> Result<Var> {
        Ok(self.forward_traced(g, batch)?.0)
    }

    /// Logits plus the output shape of every stage.
    pub fn forward_traced(&self, g: &mut Graph, batch: &Batch) -> Result<(Var, Vec<ShapeRow>)> {
        if batch.layers.len() != self.convs.len() {
            return Err(ModelError::Dataset(format!(
                "batch has {} layers, network has {}",
                batch.layers.len(),
                self.convs.len()
            )));
        }
        let b = batch.size;
        let mut trace = Vec::new();
        let mut features: Option<Var> = None;
        for (l, (conv, layer)) in self.convs.iter().zip(&batch.layers).enumerate() {
            let descriptors = g.input(layer.descriptors.clone());
            let s = layer.descriptors.shape();
            let prev = match features {
                Some(f) => {
                    let c = *g.shape(f).last().expect("rank 3 features");
                    Some(g.gather_rows(f, layer.gather.clone(), &[b, s[1], s[2], c])?)
                }
                None => None,
            };
            let h = conv.forward(g, descriptors, prev)?;
            trace.push(ShapeRow {
                stage: format!("risurconv{}", l + 1),
                dims: conv.spec.out_channels,
                points: s[1],
            });
            features = Some(h);
        }
        let mut h = features.expect("at least one layer");
        let width = self.config.feature_width();
        if let Some(enc) = &self.encoder {
            h = enc.forward(g, h)?;
            trace.push(ShapeRow {
                stage: "encoder".into(),
                dims: width,
                points: 1,
            });
        }
        h = g.reshape(h, &[b, width])?;
        for (i, fc) in self.head.iter().enumerate() {
            h = fc.forward(g, h)?;
            trace.push(ShapeRow {
                stage: format!("fc{}", i + 1),
                dims: self.config.fc_widths[i],
                points: 1,
            });
        }
        let logits = self.output.forward(g, h)?;
        trace.push(ShapeRow {
            stage: "softmax".into(),
            dims: self.config.num_classes,
            points: 1,
        });
        Ok((logits, trace))
    }

    /// Inference-mode logits for clouds that carry normals.
    pub fn logits(&self, clouds: &[PointCloud]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(clouds.len());
        for chunk in clouds.chunks(INFERENCE_BATCH) {
            let batch = Batch::assemble(&self.extractor.extract_all(chunk)?)?;
            let mut g = Graph::new(&self.store, Mode::Eval);
            let y = self.forward(&mut g, &batch)?;
            out.extend(
                g.value(y)
                    .data()
                    .chunks(self.config.num_classes)
                    .map(<[f32]>::to_vec),
            );
        }
        Ok(out)
    }

    pub fn predict(&self, clouds: &[PointCloud]) -> Result<Vec<usize>> {
        Ok(self.logits(clouds)?.iter().map(|l| argmax(l)).collect())
    }

    /// Stage shapes for one cloud.
    pub fn shape_trace(&self, cloud: &PointCloud) -> Result<Vec<ShapeRow>> {
        let batch = Batch::assemble(&[self.extractor.extract(cloud)?])?;
        let mut g = Graph::new(&self.store, Mode::Eval);
        let (_, trace) = self.forward_traced(&mut g, &batch)?;
        Ok(trace)
    }

    pub fn save(&self, w: impl Write) -> Result<()> {
        let config = serde_json::to_value(&self.config)?;
        write_checkpoint(w, &self.store, config, &self.config.hash())?;
        Ok(())
    }

    pub fn load(r: impl BufRead) -> Result<Self> {
        let ckpt = read_checkpoint(r)?;
        let config: ClassifierConfig = serde_json::from_value(ckpt.header.config.clone())?;
        if config.hash() != ckpt.header.config_hash {
            return Err(ModelError::Config(format!(
                "checkpoint config hash {} does not match its config ({})",
                ckpt.header.config_hash,
                config.hash()
            )));
        }
        let mut net = Self::new(config, 0)?;
        ckpt.load_into(&mut net.store)?;
        Ok(net)
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(values: &[f32]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
