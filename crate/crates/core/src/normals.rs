//! Normal estimation from a distance-weighted neighborhood covariance.

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{CoreError, Result};
use crate::registry::Registry;
use crate::sampling::{GridSearch, NeighborSearch};
use crate::Vec3;

pub const DEFAULT_NORMAL_K: usize = 16;

/// Weight given to a neighbor at `distance` when the farthest neighbor is
/// at `radius` (`radius > 0`).
pub trait CovarianceWeighting: Send + Sync {
    fn name(&self) -> &'static str;
    fn weight(&self, distance: f64, radius: f64) -> f64;
}

/// `(r − d) / r`, the linear falloff used by SHOT.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearFalloff;

impl CovarianceWeighting for LinearFalloff {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn weight(&self, distance: f64, radius: f64) -> f64 {
        (radius - distance) / radius
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UniformWeight;

impl CovarianceWeighting for UniformWeight {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn weight(&self, _distance: f64, _radius: f64) -> f64 {
        1.0
    }
}

pub fn weighting_registry() -> Registry<dyn CovarianceWeighting> {
    let mut reg: Registry<dyn CovarianceWeighting> = Registry::new("covariance weighting");
    reg.register("linear", |_| Ok(Box::new(LinearFalloff)));
    reg.register("uniform", |_| Ok(Box::new(UniformWeight)));
    reg
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalEstimate {
    /// Input cloud with `normals` replaced by the estimates.
    pub cloud: PointCloud,
    /// Points whose neighborhood collapsed to a single location; their
    /// normal is set to (0, 0, 1).
    pub degenerate: Vec<usize>,
}

/// Estimates unit normals with the SHOT linear weighting.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<NormalEstimate> {
    estimate_normals_with(cloud, k, &LinearFalloff)
}

/// Estimates unit normals from each point and its `k − 1` nearest others.
///
/// The normal is the eigenvector of the smallest eigenvalue of the weighted
/// covariance about the point. Orientation: `dot(n, p − centroid) ≥ 0`;
/// a zero dot product falls back to making the first nonzero component
/// positive in (z, x, y) order.
pub fn estimate_normals_with(
    cloud: &PointCloud,
    k: usize,
    weighting: &dyn CovarianceWeighting,
) -> Result<NormalEstimate> {
    if k < 3 {
        return Err(CoreError::TooFewNeighbors(k, 3));
    }
    if cloud.len() < k {
        return Err(CoreError::NotEnoughPoints {
            requested: k,
            available: cloud.len(),
        });
    }
    let points = &cloud.points;
    let queries: Vec<usize> = (0..points.len()).collect();
    // Duplicates of the query are skipped by the search, so ask for as many
    // others as are available and cope with short lists below.
    let others = k - 1;
    let neighborhoods: Vec<Vec<usize>> = match GridSearch.search(points, &queries, others) {
        Ok(n) => n.into_iter().map(|n| n.neighbor_indices).collect(),
        Err(_) => queries
            .par_iter()
            .map(|&q| neighbors_tolerant(points, q, others))
            .collect(),
    };

    let results: Vec<(Vec3, bool)> = queries
        .par_iter()
        .map(|&q| normal_at(points, q, &neighborhoods[q], weighting))
        .collect();

    let degenerate = results
        .iter()
        .enumerate()
        .filter(|(_, (_, d))| *d)
        .map(|(i, _)| i)
        .collect();
    Ok(NormalEstimate {
        cloud: PointCloud {
            points: points.clone(),
            normals: Some(results.into_iter().map(|(n, _)| n).collect()),
            label: cloud.label,
        },
        degenerate,
    })
}

/// Up to `k` nearest non-coincident points, for clouds with many duplicates.
fn neighbors_tolerant(points: &[Vec3], q: usize, k: usize) -> Vec<usize> {
    let p = points[q];
    let mut idx: Vec<usize> = (0..points.len())
        .filter(|&j| j != q && (points[j] - p).norm() > crate::sampling::DUPLICATE_EPS)
        .collect();
    idx.sort_unstable_by(|&a, &b| crate::sampling::neighbor_order(points, &p, a, b));
    idx.truncate(k);
    idx
}

fn normal_at(
    points: &[Vec3],
    q: usize,
    neighbors: &[usize],
    weighting: &dyn CovarianceWeighting,
) -> (Vec3, bool) {
    let p = points[q];
    let radius = neighbors
        .iter()
        .map(|&j| (points[j] - p).norm())
        .fold(0.0, f64::max);
    if radius <= 0.0 {
        return (Vec3::z(), true);
    }

    let mut cov = Matrix3::zeros();
    let mut total = 0.0;
    for &j in std::iter::once(&q).chain(neighbors) {
        let d = points[j] - p;
        let w = weighting.weight(d.norm(), radius);
        cov += w * d * d.transpose();
        total += w;
    }
    cov /= total;
    if !(cov.trace() > 0.0) {
        return (Vec3::z(), true);
    }

    let eig = SymmetricEigen::new(cov);
    let smallest = eig.eigenvalues.imin();
    let mut n: Vec3 = eig.eigenvectors.column(smallest).into_owned().normalize();

    let count = (neighbors.len() + 1) as f64;
    let centroid = neighbors.iter().fold(p, |acc, &j| acc + points[j]) / count;
    let dot = n.dot(&(p - centroid));
    if dot.abs() <= 1e-12 * radius {
        if let Some(c) = [n.z, n.x, n.y].into_iter().find(|c| *c != 0.0) {
            if c < 0.0 {
                n = -n;
            }
        }
    } else if dot < 0.0 {
        n = -n;
    }
    (n, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotation::{random_rotation, RotationMode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal, StandardNormal};

    fn plane(n: usize) -> PointCloud {
        PointCloud::new(
            (0..n * n)
                .map(|i| Vec3::new((i % n) as f64 * 0.1, (i / n) as f64 * 0.1, 0.0))
                .collect(),
        )
    }

    fn sphere(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    let v = Vec3::new(
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                        rng.sample(StandardNormal),
                    );
                    v.normalize()
                })
                .collect(),
        )
    }

    #[test]
    fn planar_patch_points_up() {
        let est = estimate_normals(&plane(10), 16).unwrap();
        assert!(est.degenerate.is_empty());
        for n in est.cloud.normals.unwrap() {
            assert!((n - Vec3::z()).norm() < 1e-9, "{n:?}");
        }
    }

    #[test]
    fn sphere_normals_are_radial() {
        let c = sphere(2000, 11);
        let est = estimate_normals(&c, 16).unwrap();
        let normals = est.cloud.normals.unwrap();
        let good = c
            .points
            .iter()
            .zip(&normals)
            .filter(|(p, n)| p.normalize().dot(n).clamp(-1.0, 1.0).acos() < 5f64.to_radians())
            .count();
        assert!(good as f64 >= 0.99 * c.len() as f64, "{good}/{}", c.len());
    }

    #[test]
    fn noisy_plane_median_error_below_three_degrees() {
        // Jittered 8×8 grid over a unit patch, σ = 1% of the patch extent.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let extent = 1.0;
        let g = 8;
        let noise = Normal::new(0.0, 0.01 * extent).unwrap();
        let c = PointCloud::new(
            (0..g * g)
                .map(|i| {
                    Vec3::new(
                        ((i % g) as f64 + rng.random::<f64>()) / g as f64 * extent,
                        ((i / g) as f64 + rng.random::<f64>()) / g as f64 * extent,
                        noise.sample(&mut rng),
                    )
                })
                .collect(),
        );
        let normals = estimate_normals(&c, 16).unwrap().cloud.normals.unwrap();
        let mut errs: Vec<f64> = normals
            .iter()
            .map(|n| n.dot(&Vec3::z()).abs().min(1.0).acos().to_degrees())
            .collect();
        errs.sort_by(f64::total_cmp);
        let median = errs[errs.len() / 2];
        assert!(median < 3.0, "median {median}");
    }

    #[test]
    fn coincident_neighborhood_is_flagged() {
        let est = estimate_normals(&PointCloud::new(vec![Vec3::new(1.0, 2.0, 3.0); 4]), 3).unwrap();
        assert_eq!(est.degenerate, vec![0, 1, 2, 3]);
        assert!(est
            .cloud
            .normals
            .unwrap()
            .iter()
            .all(|n| *n == Vec3::z()));
    }

    #[test]
    fn argument_validation() {
        assert!(estimate_normals(&plane(3), 2).is_err());
        assert!(estimate_normals(&plane(2), 5).is_err());
    }

    #[test]
    fn uniform_weighting_is_registered() {
        let reg = weighting_registry();
        let w = reg.create("uniform", &()).unwrap();
        let est = estimate_normals_with(&plane(6), 8, w.as_ref()).unwrap();
        assert!(est.cloud.normals.unwrap().iter().all(|n| (n - Vec3::z()).norm() < 1e-9));
    }

    #[test]
    fn rotation_equivariant_up_to_sign() {
        let c = sphere(500, 2).scaled(2.0);
        // Squash into an ellipsoid so no normal is degenerate or symmetric.
        let c = PointCloud::new(c.points.iter().map(|p| Vec3::new(p.x, 0.7 * p.y, 0.4 * p.z)).collect());
        let base = estimate_normals(&c, 16).unwrap().cloud.normals.unwrap();
        for seed in 0..5 {
            let r = random_rotation(RotationMode::So3, seed);
            let rotated = estimate_normals(&c.rotated(&r), 16).unwrap().cloud.normals.unwrap();
            for (a, b) in base.iter().zip(&rotated) {
                let ra = r.matrix() * a;
                let cross = ra.cross(b).norm();
                let angle = cross.atan2(ra.dot(b).abs());
                assert!(angle < 1e-6, "angle {angle}");
            }
        }
    }
}
