//! Farthest point sampling and exact K-nearest-neighbor search.
//!
//! Both are deterministic and depend only on point coordinates, never on
//! storage order, except through exact distance ties. Ties are broken by
//! lexicographic `(x, y, z)` comparison and then by index.

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{CoreError, Result};
use crate::registry::Registry;
use crate::Vec3;

/// Neighbors closer than this to the reference point are treated as
/// duplicates of it and skipped.
pub const DUPLICATE_EPS: f64 = 1e-12;

/// A reference point and its K nearest other points, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Neighborhood {
    pub reference_index: usize,
    pub neighbor_indices: Vec<usize>,
}

impl Neighborhood {
    pub fn k(&self) -> usize {
        self.neighbor_indices.len()
    }

    /// Whether the neighbor list is sorted by the search ordering rule
    /// relative to the reference point in `points`.
    pub fn is_ordered(&self, points: &[Vec3]) -> bool {
        let p = points[self.reference_index];
        !self.neighbor_indices.contains(&self.reference_index)
            && self.neighbor_indices.windows(2).all(|w| {
                neighbor_order(points, &p, w[0], w[1]) != Ordering::Greater
            })
    }
}

fn lex_cmp(a: &Vec3, b: &Vec3) -> Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.z.total_cmp(&b.z))
}

/// Ordering used for neighbor lists: squared distance to `p`, then
/// coordinates, then index.
pub fn neighbor_order(points: &[Vec3], p: &Vec3, a: usize, b: usize) -> Ordering {
    let (pa, pb) = (&points[a], &points[b]);
    (pa - p)
        .norm_squared()
        .total_cmp(&(pb - p).norm_squared())
        .then_with(|| lex_cmp(pa, pb))
        .then(a.cmp(&b))
}

/// Strategy for exact neighbor search.
pub trait NeighborSearch: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one [`Neighborhood`] per query index, in query order.
    fn search(&self, points: &[Vec3], queries: &[usize], k: usize) -> Result<Vec<Neighborhood>>;
}

pub fn search_registry() -> Registry<dyn NeighborSearch> {
    let mut reg: Registry<dyn NeighborSearch> = Registry::new("neighbor search");
    reg.register("grid", |_| Ok(Box::new(GridSearch)));
    reg.register("brute-force", |_| Ok(Box::new(BruteForceSearch)));
    reg
}

fn check_knn_args(points: &[Vec3], queries: &[usize], k: usize) -> Result<()> {
    if points.is_empty() {
        return Err(CoreError::EmptyCloud);
    }
    if k == 0 {
        return Err(CoreError::TooFewNeighbors(0, 1));
    }
    if k >= points.len() {
        return Err(CoreError::NotEnoughPoints {
            requested: k + 1,
            available: points.len(),
        });
    }
    if let Some(&q) = queries.iter().find(|&&q| q >= points.len()) {
        return Err(CoreError::InvalidArgument(format!(
            "query index {q} out of range for {} points",
            points.len()
        )));
    }
    Ok(())
}

fn is_candidate(points: &[Vec3], query: usize, j: usize) -> bool {
    j != query && (points[j] - points[query]).norm_squared() > DUPLICATE_EPS * DUPLICATE_EPS
}

fn finish(points: &[Vec3], query: usize, mut candidates: Vec<usize>, k: usize) -> Result<Neighborhood> {
    if candidates.len() < k {
        return Err(CoreError::NotEnoughPoints {
            requested: k + 1,
            available: candidates.len() + 1,
        });
    }
    let p = points[query];
    candidates.sort_unstable_by(|&a, &b| neighbor_order(points, &p, a, b));
    candidates.truncate(k);
    Ok(Neighborhood {
        reference_index: query,
        neighbor_indices: candidates,
    })
}

/// Exhaustive scan over all points.
#[derive(Debug, Clone, Copy, Default)]
pub struct BruteForceSearch;

impl NeighborSearch for BruteForceSearch {
    fn name(&self) -> &'static str {
        "brute-force"
    }

    fn search(&self, points: &[Vec3], queries: &[usize], k: usize) -> Result<Vec<Neighborhood>> {
        check_knn_args(points, queries, k)?;
        queries
            .par_iter()
            .map(|&q| {
                let candidates = (0..points.len()).filter(|&j| is_candidate(points, q, j)).collect();
                finish(points, q, candidates, k)
            })
            .collect()
    }
}

/// Uniform grid over the bounding box, searched in growing Chebyshev rings
/// until no unvisited cell can hold a point closer than the current K-th
/// candidate.
#[derive(Debug, Clone, Copy, Default)]
pub struct GridSearch;

struct Grid {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    members: Vec<usize>,
}

impl Grid {
    fn build(points: &[Vec3]) -> Option<Grid> {
        let mut lo = points[0];
        let mut hi = points[0];
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let extent = (hi - lo).max();
        if !(extent > 0.0) || !extent.is_finite() {
            return None;
        }
        let per_axis = ((points.len() as f64 / 2.0).cbrt().ceil() as usize).max(1);
        let cell = extent / per_axis as f64;
        let dims: [usize; 3] =
            std::array::from_fn(|a| (((hi[a] - lo[a]) / cell).floor() as usize + 1).max(1));
        let mut grid = Grid {
            origin: lo,
            cell,
            dims,
            starts: vec![0; dims[0] * dims[1] * dims[2] + 1],
            members: vec![0; points.len()],
        };
        let cells: Vec<usize> = points.iter().map(|p| grid.flat(grid.coords(p))).collect();
        for &c in &cells {
            grid.starts[c + 1] += 1;
        }
        for i in 1..grid.starts.len() {
            grid.starts[i] += grid.starts[i - 1];
        }
        let mut fill = grid.starts.clone();
        for (i, &c) in cells.iter().enumerate() {
            grid.members[fill[c]] = i;
            fill[c] += 1;
        }
        Some(grid)
    }

    fn coords(&self, p: &Vec3) -> [usize; 3] {
        std::array::from_fn(|a| {
            let c = ((p[a] - self.origin[a]) / self.cell).floor();
            (c.max(0.0) as usize).min(self.dims[a] - 1)
        })
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn cell_members(&self, c: [usize; 3]) -> &[usize] {
        let f = self.flat(c);
        &self.members[self.starts[f]..self.starts[f + 1]]
    }

    /// Calls `visit` for every in-bounds cell at Chebyshev distance exactly
    /// `ring` from `center`.
    fn for_ring(&self, center: [usize; 3], ring: usize, mut visit: impl FnMut([usize; 3])) {
        let r = ring as isize;
        let range = |a: usize| {
            let c = center[a] as isize;
            (c - r).max(0)..=(c + r).min(self.dims[a] as isize - 1)
        };
        for z in range(2) {
            for y in range(1) {
                for x in range(0) {
                    let d = (x - center[0] as isize)
                        .abs()
                        .max((y - center[1] as isize).abs())
                        .max((z - center[2] as isize).abs());
                    if d == r {
                        visit([x as usize, y as usize, z as usize]);
                    }
                }
            }
        }
    }

    fn max_ring(&self) -> usize {
        *self.dims.iter().max().unwrap()
    }
}

impl NeighborSearch for GridSearch {
    fn name(&self) -> &'static str {
        "grid"
    }

    fn search(&self, points: &[Vec3], queries: &[usize], k: usize) -> Result<Vec<Neighborhood>> {
        check_knn_args(points, queries, k)?;
        let grid = match Grid::build(points) {
            Some(g) => g,
            None => return BruteForceSearch.search(points, queries, k),
        };
        queries
            .par_iter()
            .map(|&q| {
                let p = points[q];
                let center = grid.coords(&p);
                let mut candidates = Vec::new();
                let mut scratch = Vec::new();
                for ring in 0..=grid.max_ring() {
                    grid.for_ring(center, ring, |c| {
                        candidates.extend(
                            grid.cell_members(c)
                                .iter()
                                .copied()
                                .filter(|&j| is_candidate(points, q, j)),
                        )
                    });
                    if candidates.len() >= k {
                        scratch.clear();
                        scratch.extend(candidates.iter().map(|&j| (points[j] - p).norm_squared()));
                        let (_, kth, _) = scratch.select_nth_unstable_by(k - 1, f64::total_cmp);
                        // Unvisited cells are at least `ring * cell` away.
                        let bound = (ring as f64 - 1e-9).max(0.0) * grid.cell;
                        if kth.sqrt() < bound {
                            break;
                        }
                    }
                }
                finish(points, q, candidates, k)
            })
            .collect()
    }
}

/// Exact K nearest neighbors of each query point (grid backend).
pub fn knn(cloud: &PointCloud, query_indices: &[usize], k: usize) -> Result<Vec<Neighborhood>> {
    GridSearch.search(&cloud.points, query_indices, k)
}

/// How the first farthest-point pick is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FpsSeed {
    /// The point farthest from the centroid. Deterministic and
    /// independent of storage order.
    #[default]
    CentroidFarthest,
    /// A uniformly random starting index.
    Random(u64),
}

fn fps_better(points: &[Vec3], score: &[f64], a: usize, b: usize) -> bool {
    match score[a].total_cmp(&score[b]) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match lex_cmp(&points[a], &points[b]) {
            Ordering::Less => true,
            Ordering::Greater => false,
            Ordering::Equal => a < b,
        },
    }
}

fn argmax_unpicked(points: &[Vec3], score: &[f64], picked: &[bool]) -> usize {
    let mut best: Option<usize> = None;
    for i in 0..points.len() {
        if picked[i] {
            continue;
        }
        best = match best {
            Some(b) if !fps_better(points, score, i, b) => Some(b),
            _ => Some(i),
        };
    }
    best.expect("at least one unpicked point")
}

/// Farthest point sampling of `m` indices, returned in pick order.
pub fn farthest_point_sample(cloud: &PointCloud, m: usize) -> Result<Vec<usize>> {
    farthest_point_sample_with(&cloud.points, m, FpsSeed::CentroidFarthest)
}

pub fn farthest_point_sample_with(points: &[Vec3], m: usize, seed: FpsSeed) -> Result<Vec<usize>> {
    let n = points.len();
    if n == 0 {
        return Err(CoreError::EmptyCloud);
    }
    if m == 0 || m > n {
        return Err(CoreError::NotEnoughPoints {
            requested: m,
            available: n,
        });
    }
    let mut picked = vec![false; n];
    let first = match seed {
        FpsSeed::CentroidFarthest => {
            let centroid = points.iter().fold(Vec3::zeros(), |a, p| a + p) / n as f64;
            let score: Vec<f64> = points.iter().map(|p| (p - centroid).norm_squared()).collect();
            argmax_unpicked(points, &score, &picked)
        }
        FpsSeed::Random(s) => ChaCha8Rng::seed_from_u64(s).random_range(0..n),
    };

    let mut order = Vec::with_capacity(m);
    let mut min_dist = vec![f64::INFINITY; n];
    let mut current = first;
    loop {
        order.push(current);
        picked[current] = true;
        if order.len() == m {
            break;
        }
        let c = points[current];
        for (d, p) in min_dist.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
        current = argmax_unpicked(points, &min_dist, &picked);
    }
    Ok(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| v(rng.random(), rng.random(), rng.random::<f64>() * 0.5))
            .collect()
    }

    #[test]
    fn collinear_neighbors_in_distance_order() {
        let c = PointCloud::new((0..4).map(|i| v(i as f64, 0.0, 0.0)).collect());
        let n = knn(&c, &[0], 2).unwrap();
        assert_eq!(n[0].neighbor_indices, vec![1, 2]);
    }

    #[test]
    fn k_at_least_point_count_is_an_error() {
        let c = PointCloud::new((0..4).map(|i| v(i as f64, 0.0, 0.0)).collect());
        assert!(knn(&c, &[0], 4).is_err());
        assert!(knn(&c, &[0], 3).is_ok());
    }

    #[test]
    fn equal_distances_break_ties_by_coordinates() {
        let c = PointCloud::new(vec![
            v(0.0, 0.0, 0.0),
            v(0.0, 1.0, 0.0),
            v(1.0, 0.0, 0.0),
            v(-1.0, 0.0, 0.0),
            v(0.0, -1.0, 0.0),
        ]);
        let n = knn(&c, &[0], 4).unwrap();
        assert_eq!(n[0].neighbor_indices, vec![3, 4, 1, 2]);
    }

    #[test]
    fn coincident_points_are_skipped() {
        let c = PointCloud::new(vec![
            v(0.0, 0.0, 0.0),
            v(0.0, 0.0, 0.0),
            v(1.0, 0.0, 0.0),
            v(2.0, 0.0, 0.0),
        ]);
        let n = knn(&c, &[0], 2).unwrap();
        assert_eq!(n[0].neighbor_indices, vec![2, 3]);
        assert!(knn(&c, &[0], 3).is_err());
    }

    #[test]
    fn grid_matches_brute_force_on_random_clouds() {
        for seed in 0..5 {
            let pts = random_points(1000, seed);
            let queries: Vec<usize> = (0..pts.len()).collect();
            let a = GridSearch.search(&pts, &queries, 8).unwrap();
            let b = BruteForceSearch.search(&pts, &queries, 8).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn grid_handles_planar_and_degenerate_extents() {
        let pts: Vec<Vec3> = (0..200).map(|i| v((i % 20) as f64, (i / 20) as f64, 0.0)).collect();
        let q: Vec<usize> = (0..pts.len()).collect();
        assert_eq!(
            GridSearch.search(&pts, &q, 6).unwrap(),
            BruteForceSearch.search(&pts, &q, 6).unwrap()
        );
    }

    #[test]
    fn registry_exposes_both_backends() {
        let reg = search_registry();
        assert_eq!(reg.names().collect::<Vec<_>>(), vec!["brute-force", "grid"]);
        assert_eq!(reg.create("grid", &()).unwrap().name(), "grid");
    }

    #[test]
    fn fps_unit_square_picks_diagonal() {
        let c = PointCloud::new(vec![
            v(0.0, 0.0, 0.0),
            v(1.0, 0.0, 0.0),
            v(0.0, 1.0, 0.0),
            v(1.0, 1.0, 0.0),
        ]);
        assert_eq!(farthest_point_sample(&c, 2).unwrap(), vec![0, 3]);
    }

    #[test]
    fn fps_exhaustion_is_a_permutation() {
        let pts = random_points(64, 9);
        let mut order = farthest_point_sample_with(&pts, 64, FpsSeed::CentroidFarthest).unwrap();
        order.sort_unstable();
        assert_eq!(order, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn fps_single_pick_is_centroid_farthest() {
        let pts = random_points(100, 4);
        let c: Vec3 = pts.iter().sum::<Vec3>() / 100.0;
        let far = (0..100)
            .max_by(|&a, &b| (pts[a] - c).norm().total_cmp(&(pts[b] - c).norm()))
            .unwrap();
        assert_eq!(farthest_point_sample_with(&pts, 1, FpsSeed::CentroidFarthest).unwrap(), vec![far]);
    }

    #[test]
    fn fps_rejects_oversized_requests() {
        let pts = random_points(5, 0);
        assert!(farthest_point_sample_with(&pts, 6, FpsSeed::CentroidFarthest).is_err());
        assert!(farthest_point_sample_with(&pts, 0, FpsSeed::CentroidFarthest).is_err());
    }

    #[test]
    fn fps_random_seed_mode_is_reproducible() {
        let pts = random_points(50, 1);
        let a = farthest_point_sample_with(&pts, 10, FpsSeed::Random(5)).unwrap();
        let b = farthest_point_sample_with(&pts, 10, FpsSeed::Random(5)).unwrap();
        assert_eq!(a, b);
    }
}
