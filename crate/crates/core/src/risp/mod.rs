//! Rotation Invariant Surface Properties.
//!
//! For every neighbor `x_i` of a reference point `p`, the two neighbors
//! adjacent to it in distance order, `x_{i−1}` and `x_{i+1}`, span two
//! triangles `(p, x_i, x_{i−1})` and `(p, x_i, x_{i+1})` that share the edge
//! `p x_i`. Fourteen lengths and angles over these triangles and the four
//! normals at their corners describe the local surface without reference to
//! any coordinate frame.
//!
//! Edge notation: `ab` denotes the vector `b − a`, so `x_{i−1}p = p − x_{i−1}`.

mod dump;
mod identity;
mod variants;

pub use dump::{read_dump, write_dump, FeatureDump, DUMP_MAGIC, DUMP_VERSION};
pub use identity::{
    congruence_oracle, dihedral_mu, measured_mu, neighborhood_fit, procrustes, tetrahedron_mu, Congruence,
    ProcrustesFit, CONGRUENCE_TOL,
};
pub use variants::{
    descriptor_registry, ColumnSubset, DescriptorOptions, ExtendedRisp, MultiSurfaceRisp,
    StandardRisp, SurfaceDescriptor,
};

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{CoreError, Result};
use crate::sampling::Neighborhood;
use crate::Vec3;

/// Vectors shorter than this have no direction.
pub const ANGLE_EPS: f64 = 1e-12;

pub const STANDARD_COLUMNS: [&str; 14] = [
    "L0", "phi1", "phi2", "phi3", "phi4", "phi5", "alpha1", "alpha2", "beta1", "beta2", "theta1",
    "theta2", "gamma1", "gamma2",
];
pub const EXTENDED_COLUMNS: [&str; 2] = ["lambda", "mu"];

/// Unsigned angle between two vectors, in `[0, π]`.
///
/// Uses `atan2(|u × v|, u · v)`, which stays accurate near 0 and π where
/// `acos` of the normalized dot product does not.
pub fn angle(u: &Vec3, v: &Vec3) -> Result<f64> {
    if u.norm() <= ANGLE_EPS || v.norm() <= ANGLE_EPS {
        return Err(CoreError::DegenerateGeometry("zero-length vector in angle"));
    }
    Ok(u.cross(v).norm().atan2(u.dot(v)))
}

/// Slots of `x_{i−1}` and `x_{i+1}` for slot `i`, wrapping cyclically at
/// both ends of the distance-sorted list.
pub fn adjacent_neighbors(k: usize, i: usize) -> Result<(usize, usize)> {
    offset_slot(k, i, -1).and_then(|prev| Ok((prev, offset_slot(k, i, 1)?)))
}

/// Slot at signed `offset` from `i`, cyclic over `k` slots.
pub fn offset_slot(k: usize, i: usize, offset: isize) -> Result<usize> {
    if k < 3 {
        return Err(CoreError::TooFewNeighbors(k, 3));
    }
    if i >= k {
        return Err(CoreError::InvalidArgument(format!("slot {i} out of range for K={k}")));
    }
    Ok((i as isize + offset).rem_euclid(k as isize) as usize)
}

/// Corners and normals of the two triangles for one neighbor slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangleFrame {
    pub p: Vec3,
    pub x_i: Vec3,
    pub x_prev: Vec3,
    pub x_next: Vec3,
    pub n_p: Vec3,
    pub n_i: Vec3,
    pub n_prev: Vec3,
    pub n_next: Vec3,
}

impl TriangleFrame {
    pub fn normals(&self) -> [Vec3; 4] {
        [self.n_p, self.n_i, self.n_prev, self.n_next]
    }

    /// The six corner positions and the four normal tips, for congruence
    /// checks: `p, x_i, x_prev, x_next, p+n_p, x_i+n_i, x_prev+n_prev, x_next+n_next`.
    pub fn points(&self) -> [Vec3; 8] {
        [
            self.p,
            self.x_i,
            self.x_prev,
            self.x_next,
            self.p + self.n_p,
            self.x_i + self.n_i,
            self.x_prev + self.n_prev,
            self.x_next + self.n_next,
        ]
    }
}

fn normals_of(cloud: &PointCloud) -> Result<&[Vec3]> {
    cloud.normals.as_deref().ok_or(CoreError::MissingNormals)
}

/// One frame per neighbor slot, `x_{i±1}` chosen by [`adjacent_neighbors`].
pub fn build_frames(cloud: &PointCloud, nbhd: &Neighborhood) -> Result<Vec<TriangleFrame>> {
    let normals = normals_of(cloud)?;
    let k = nbhd.k();
    let idx = &nbhd.neighbor_indices;
    let r = nbhd.reference_index;
    (0..k)
        .map(|i| {
            let (prev, next) = adjacent_neighbors(k, i)?;
            let (a, b, c) = (idx[i], idx[prev], idx[next]);
            Ok(TriangleFrame {
                p: cloud.points[r],
                x_i: cloud.points[a],
                x_prev: cloud.points[b],
                x_next: cloud.points[c],
                n_p: normals[r],
                n_i: normals[a],
                n_prev: normals[b],
                n_next: normals[c],
            })
        })
        .collect()
}

/// `K × C` descriptor block for one reference point, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RispMatrix {
    k: usize,
    columns: usize,
    values: Vec<f64>,
    /// Rows where some angle had a zero-length argument or a triangle was
    /// collinear and the fallback value 0 was used.
    pub degenerate_rows: usize,
}

impl RispMatrix {
    pub fn from_rows(k: usize, columns: usize, values: Vec<f64>, degenerate_rows: usize) -> Self {
        assert_eq!(values.len(), k * columns, "RispMatrix shape mismatch");
        Self {
            k,
            columns,
            values,
            degenerate_rows,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn columns(&self) -> usize {
        self.columns
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.columns..(i + 1) * self.columns]
    }

    pub fn get(&self, i: usize, c: usize) -> f64 {
        self.values[i * self.columns + c]
    }

    pub fn max_abs_diff(&self, other: &RispMatrix) -> f64 {
        assert_eq!((self.k, self.columns), (other.k, other.columns));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Keeps only the listed columns, in the given order.
    pub fn select_columns(&self, keep: &[usize]) -> RispMatrix {
        let values = (0..self.k)
            .flat_map(|i| keep.iter().map(move |&c| self.get(i, c)))
            .collect();
        RispMatrix::from_rows(self.k, keep.len(), values, self.degenerate_rows)
    }
}

/// How angles are measured. Only [`AngleConvention::Standard`] is rotation
/// invariant; the other exists as a negative control for invariance checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AngleConvention {
    #[default]
    Standard,
    /// Drops the z component of both arguments before measuring.
    ProjectedXy,
}

/// Angle evaluation that records degenerate arguments instead of failing.
pub(crate) struct RowScope {
    convention: AngleConvention,
    pub degenerate: bool,
}

impl RowScope {
    pub(crate) fn new(convention: AngleConvention) -> Self {
        Self {
            convention,
            degenerate: false,
        }
    }

    pub(crate) fn angle(&mut self, u: &Vec3, v: &Vec3) -> f64 {
        let (u, v) = match self.convention {
            AngleConvention::Standard => (*u, *v),
            AngleConvention::ProjectedXy => (Vec3::new(u.x, u.y, 0.0), Vec3::new(v.x, v.y, 0.0)),
        };
        angle(&u, &v).unwrap_or_else(|_| {
            self.degenerate = true;
            0.0
        })
    }

    /// Angle between the normals of two triangles hinged on a common edge,
    /// given as cross products. Collinear triangles give 0.
    pub(crate) fn dihedral(&mut self, c1: &Vec3, c2: &Vec3) -> f64 {
        if c1.norm() < ANGLE_EPS || c2.norm() < ANGLE_EPS {
            self.degenerate = true;
            return 0.0;
        }
        self.angle(c1, c2)
    }
}

/// Writes the 14 standard properties of `f` into `out`.
pub(crate) fn standard_row(f: &TriangleFrame, scope: &mut RowScope, out: &mut [f64]) {
    let prev_p = f.p - f.x_prev; // x_{i−1}p
    let i_p = f.p - f.x_i; // x_i p
    let next_p = f.p - f.x_next; // x_{i+1}p
    let prev_i = f.x_i - f.x_prev; // x_{i−1}x_i
    let next_i = f.x_i - f.x_next; // x_{i+1}x_i

    out[0] = i_p.norm();
    out[1] = scope.angle(&prev_p, &i_p);
    out[2] = scope.angle(&next_p, &i_p);
    out[3] = scope.angle(&prev_i, &prev_p);
    out[4] = scope.angle(&next_p, &next_i);
    out[5] = scope.dihedral(&next_p.cross(&i_p), &prev_p.cross(&i_p));
    out[6] = scope.angle(&f.n_p, &i_p);
    out[7] = scope.angle(&f.n_p, &prev_p);
    out[8] = scope.angle(&f.n_i, &i_p);
    out[9] = scope.angle(&f.n_i, &prev_i);
    out[10] = scope.angle(&f.n_prev, &prev_p);
    out[11] = scope.angle(&f.n_prev, &prev_i);
    out[12] = scope.angle(&f.n_next, &next_i);
    out[13] = scope.angle(&f.n_next, &next_p);
}

fn frames_to_matrix(
    frames: &[TriangleFrame],
    columns: usize,
    convention: AngleConvention,
    row: impl Fn(&TriangleFrame, &mut RowScope, &mut [f64]),
) -> RispMatrix {
    let mut values = vec![0.0; frames.len() * columns];
    let mut degenerate = 0;
    for (f, out) in frames.iter().zip(values.chunks_mut(columns)) {
        let mut scope = RowScope::new(convention);
        row(f, &mut scope, out);
        degenerate += scope.degenerate as usize;
    }
    RispMatrix::from_rows(frames.len(), columns, values, degenerate)
}

/// The standard `K × 14` descriptor, columns in [`STANDARD_COLUMNS`] order.
pub fn risp(cloud: &PointCloud, nbhd: &Neighborhood) -> Result<RispMatrix> {
    risp_with_convention(cloud, nbhd, AngleConvention::Standard)
}

pub fn risp_with_convention(
    cloud: &PointCloud,
    nbhd: &Neighborhood,
    convention: AngleConvention,
) -> Result<RispMatrix> {
    let frames = build_frames(cloud, nbhd)?;
    Ok(frames_to_matrix(&frames, 14, convention, standard_row))
}

/// Standard descriptor plus `λ = ∠(n_p, n_{i+1})` and `μ = ∠(n_p, n_{i−1})`.
pub fn extended_risp(cloud: &PointCloud, nbhd: &Neighborhood) -> Result<RispMatrix> {
    let frames = build_frames(cloud, nbhd)?;
    Ok(frames_to_matrix(&frames, 16, AngleConvention::Standard, |f, scope, out| {
        standard_row(f, scope, &mut out[..14]);
        out[14] = scope.angle(&f.n_p, &f.n_next);
        out[15] = scope.angle(&f.n_p, &f.n_prev);
    }))
}

/// Descriptor blocks for many neighborhoods, computed in parallel.
pub fn describe_all(
    descriptor: &dyn SurfaceDescriptor,
    cloud: &PointCloud,
    neighborhoods: &[Neighborhood],
) -> Result<Vec<RispMatrix>> {
    neighborhoods
        .par_iter()
        .map(|n| descriptor.describe(cloud, n))
        .collect()
}
