//! Per-cloud geometry for every layer of the network.
//!
//! Layer `l` picks its reference points by farthest point sampling over
//! layer `l − 1`'s reference set (the input cloud for the first layer) and
//! finds each reference point's K nearest neighbors in that same set. The
//! neighbor indices are therefore rows of layer `l − 1`'s feature map, which
//! is what lets the network gather previous features onto the new
//! neighborhoods. Normals travel with the points they belong to.

use std::borrow::Cow;

use rayon::prelude::*;
use risurconv_core::normals::{estimate_normals, DEFAULT_NORMAL_K};
use risurconv_core::risp::SurfaceDescriptor;
use risurconv_core::sampling::{farthest_point_sample, knn};
use risurconv_core::PointCloud;
use risurconv_nn::Tensor;

use crate::config::{ClassifierConfig, LayerSpec};
use crate::error::{ModelError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGeometry {
    pub points: usize,
    pub neighbors: usize,
    pub columns: usize,
    /// `points × neighbors × columns`, row-major.
    pub descriptors: Vec<f32>,
    /// `points × neighbors`: row of each neighbor in the previous layer's
    /// reference set (input cloud indices for the first layer).
    pub parents: Vec<usize>,
    /// Input cloud index of each reference point.
    pub origin: Vec<usize>,
    pub degenerate_rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CloudGeometry {
    pub layers: Vec<LayerGeometry>,
}

pub struct FeatureExtractor {
    descriptor: Box<dyn SurfaceDescriptor>,
    layers: Vec<LayerSpec>,
    reestimate_normals: bool,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("descriptor", &self.descriptor.name())
            .field("layers", &self.layers)
            .field("reestimate_normals", &self.reestimate_normals)
            .finish()
    }
}

/// The cloud itself when it carries normals, otherwise a copy with
/// estimated ones.
pub fn ensure_normals(cloud: &PointCloud) -> Result<Cow<'_, PointCloud>> {
    if cloud.has_normals() {
        return Ok(Cow::Borrowed(cloud));
    }
    let k = DEFAULT_NORMAL_K.min(cloud.len());
    Ok(Cow::Owned(estimate_normals(cloud, k)?.cloud))
}

impl FeatureExtractor {
    pub fn new(config: &ClassifierConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            descriptor: config.descriptor()?,
            layers: config.layers.clone(),
            reestimate_normals: config.reestimate_normals,
        })
    }

    pub fn columns(&self) -> usize {
        self.descriptor.columns()
    }

    /// Geometry of every layer for one cloud with normals.
    ///
    /// A cloud with fewer points than the first layer asks for is padded
    /// by repeating its farthest-point order.
    pub fn extract(&self, cloud: &PointCloud) -> Result<CloudGeometry> {
        cloud.validate()?;
        if !cloud.has_normals() {
            return Err(risurconv_core::CoreError::MissingNormals.into());
        }
        let columns = self.columns();
        let mut current = Cow::Borrowed(cloud);
        let mut current_origin: Vec<usize> = (0..cloud.len()).collect();
        let mut layers = Vec::with_capacity(self.layers.len());
        for (l, spec) in self.layers.iter().enumerate() {
            let degenerate = |source| ModelError::DegenerateCloud { layer: l, source };
            let n = current.len();
            let refs = if spec.points <= n {
                farthest_point_sample(&current, spec.points).map_err(degenerate)?
            } else if l == 0 {
                let order = farthest_point_sample(&current, n).map_err(degenerate)?;
                order.iter().copied().cycle().take(spec.points).collect()
            } else {
                return Err(ModelError::Config(format!(
                    "layer {l} asks for {} points from {n}",
                    spec.points
                )));
            };
            let hoods = knn(&current, &refs, spec.neighbors).map_err(degenerate)?;
            let mut descriptors = Vec::with_capacity(spec.points * spec.neighbors * columns);
            let mut parents = Vec::with_capacity(spec.points * spec.neighbors);
            let mut degenerate_rows = 0;
            for hood in &hoods {
                let block = self.descriptor.describe(&current, hood).map_err(degenerate)?;
                descriptors.extend(block.values().iter().map(|&v| v as f32));
                degenerate_rows += block.degenerate_rows;
                parents.extend_from_slice(&hood.neighbor_indices);
            }
            let origin: Vec<usize> = refs.iter().map(|&r| current_origin[r]).collect();

            let mut next = current.select(&refs);
            if self.reestimate_normals && l + 1 < self.layers.len() && next.len() >= 3 {
                let k = DEFAULT_NORMAL_K.min(next.len());
                if let Ok(est) = estimate_normals(&next, k) {
                    next = est.cloud;
                }
            }
            layers.push(LayerGeometry {
                points: spec.points,
                neighbors: spec.neighbors,
                columns,
                descriptors,
                parents,
                origin: origin.clone(),
                degenerate_rows,
            });
            current = Cow::Owned(next);
            current_origin = origin;
        }
        Ok(CloudGeometry { layers })
    }

    /// [`extract`](Self::extract) over many clouds in parallel, in order.
    pub fn extract_all(&self, clouds: &[PointCloud]) -> Result<Vec<CloudGeometry>> {
        clouds.par_iter().map(|c| self.extract(c)).collect()
    }
}

/// Tensors for a batch of clouds.
#[derive(Debug, Clone)]
pub struct BatchLayer {
    /// `[B, N, K, columns]`.
    pub descriptors: Tensor,
    /// Rows of the previous layer's `[B·N_prev, C]` features for each
    /// `(b, n, k)` slot; empty for the first layer.
    pub gather: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub layers: Vec<BatchLayer>,
}

impl Batch {
    pub fn assemble(geometries: &[CloudGeometry]) -> Result<Batch> {
        let first = geometries
            .first()
            .ok_or_else(|| ModelError::Dataset("empty batch".into()))?;
        let b = geometries.len();
        let mut layers = Vec::with_capacity(first.layers.len());
        for (l, proto) in first.layers.iter().enumerate() {
            let mut data = Vec::with_capacity(b * proto.descriptors.len());
            let mut gather = Vec::new();
            for (bi, g) in geometries.iter().enumerate() {
                let layer = &g.layers[l];
                if (layer.points, layer.neighbors, layer.columns)
                    != (proto.points, proto.neighbors, proto.columns)
                {
                    return Err(ModelError::Dataset(format!("clouds disagree on layer {l} geometry")));
                }
                data.extend_from_slice(&layer.descriptors);
                if l > 0 {
                    let prev_n = first.layers[l - 1].points;
                    gather.extend(layer.parents.iter().map(|&p| bi * prev_n + p));
                }
            }
            let descriptors = Tensor::new(vec![b, proto.points, proto.neighbors, proto.columns], data)?;
            layers.push(BatchLayer { descriptors, gather });
        }
        Ok(Batch { size: b, layers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_dataset, ShapeClass, SynthOptions};
    use risurconv_core::Vec3;

    fn tiny_config() -> ClassifierConfig {
        let mut c = ClassifierConfig::toy(5);
        c.layers = vec![
            LayerSpec { points: 24, neighbors: 6, channels: 4 },
            LayerSpec { points: 10, neighbors: 4, channels: 6 },
            LayerSpec { points: 1, neighbors: 9, channels: 8 },
        ];
        c.encoder_heads = 2;
        c
    }

    fn sample_cloud(points: usize, seed: u64) -> PointCloud {
        synth_dataset(
            &[ShapeClass::Torus],
            1,
            &SynthOptions {
                points,
                noise_sigma: 0.01,
                seed,
            },
        )
        .remove(0)
    }

    #[test]
    fn layer_shapes_follow_config() {
        let ex = FeatureExtractor::new(&tiny_config()).unwrap();
        let g = ex.extract(&sample_cloud(64, 1)).unwrap();
        let dims: Vec<_> = g.layers.iter().map(|l| (l.points, l.neighbors, l.descriptors.len())).collect();
        assert_eq!(dims, [(24, 6, 24 * 6 * 14), (10, 4, 10 * 4 * 14), (1, 9, 9 * 14)]);
    }

    /// Follows every gather index back to input coordinates and checks it
    /// against a brute-force neighbor search over the previous layer's
    /// reference points.
    #[test]
    fn gathered_parents_are_the_geometric_neighbors() {
        let cloud = sample_cloud(64, 2);
        let ex = FeatureExtractor::new(&tiny_config()).unwrap();
        let g = ex.extract(&cloud).unwrap();
        for l in 1..g.layers.len() {
            let prev = &g.layers[l - 1];
            let layer = &g.layers[l];
            let prev_points: Vec<Vec3> = prev.origin.iter().map(|&o| cloud.points[o]).collect();
            for (n, &o) in layer.origin.iter().enumerate() {
                let p = cloud.points[o];
                assert!(prev.origin.contains(&o), "reference not drawn from previous layer");
                let mut expected: Vec<(f64, usize)> = prev_points
                    .iter()
                    .enumerate()
                    .filter(|(_, q)| (*q - p).norm() > 0.0)
                    .map(|(i, q)| ((q - p).norm(), i))
                    .collect();
                expected.sort_by(|a, b| a.0.total_cmp(&b.0));
                let slots = &layer.parents[n * layer.neighbors..(n + 1) * layer.neighbors];
                for (slot, &(d, _)) in slots.iter().zip(&expected) {
                    let got = cloud.points[prev.origin[*slot]];
                    assert!(((got - p).norm() - d).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batch_gather_offsets_rows_per_cloud() {
        let ex = FeatureExtractor::new(&tiny_config()).unwrap();
        let geoms = ex
            .extract_all(&[sample_cloud(64, 3), sample_cloud(64, 4)])
            .unwrap();
        let batch = Batch::assemble(&geoms).unwrap();
        assert_eq!(batch.layers[0].descriptors.shape(), [2, 24, 6, 14]);
        assert!(batch.layers[0].gather.is_empty());
        let gather = &batch.layers[1].gather;
        assert_eq!(gather.len(), 2 * 10 * 4);
        assert!(gather[..40].iter().all(|&r| r < 24));
        assert!(gather[40..].iter().all(|&r| (24..48).contains(&r)));
        assert_eq!(gather[40] - 24, geoms[1].layers[1].parents[0]);
    }

    #[test]
    fn small_clouds_are_padded_in_fps_order() {
        let mut c = tiny_config();
        c.layers[0].points = 40;
        let ex = FeatureExtractor::new(&c).unwrap();
        let g = ex.extract(&sample_cloud(32, 5)).unwrap();
        let o = &g.layers[0].origin;
        assert_eq!(o.len(), 40);
        assert_eq!(&o[32..], &o[..8]);
    }

    #[test]
    fn too_few_distinct_points_is_degenerate() {
        let cloud = PointCloud::with_normals(vec![Vec3::new(1.0, 0.0, 0.0); 30], vec![Vec3::z(); 30]).unwrap();
        let ex = FeatureExtractor::new(&tiny_config()).unwrap();
        assert!(matches!(ex.extract(&cloud), Err(ModelError::DegenerateCloud { layer: 0, .. })));
    }

    #[test]
    fn missing_normals_are_rejected_then_estimated() {
        let mut cloud = sample_cloud(64, 6);
        cloud.normals = None;
        let ex = FeatureExtractor::new(&tiny_config()).unwrap();
        assert!(ex.extract(&cloud).is_err());
        let with = ensure_normals(&cloud).unwrap();
        ex.extract(&with).unwrap();
    }
}
