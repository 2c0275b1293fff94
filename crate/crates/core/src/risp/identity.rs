//! Geometric identities and congruence tests used to validate the
//! descriptor's completeness.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SVD};

use crate::cloud::PointCloud;
use crate::error::{CoreError, Result};
use crate::sampling::Neighborhood;
use crate::Vec3;

use super::{angle, normals_of, TriangleFrame};

/// Largest per-point residual still counted as congruent.
pub const CONGRUENCE_TOL: f64 = 1e-6;

/// The angle μ between `n_i` and `x_i x_{i+1}` predicted from
/// `cos μ = cos φ6 cos β1 + sin φ6 sin β1 cos φ5` with `φ6 = π − φ2 − φ4`.
///
/// This reproduces the tetrahedron relation exactly as stated; note that φ5
/// here is the dihedral between the two triangles, which equals the angle
/// the spherical law of cosines actually needs only when `n_i` lies in the
/// first triangle's plane. [`dihedral_mu`] uses the correct dihedral.
pub fn tetrahedron_mu(phi2: f64, phi4: f64, phi5: f64, beta1: f64) -> Result<f64> {
    for (name, v) in [("phi2", phi2), ("phi4", phi4), ("phi5", phi5), ("beta1", beta1)] {
        if !(0.0..=PI).contains(&v) {
            return Err(CoreError::InvalidArgument(format!("{name} = {v} outside [0, pi]")));
        }
    }
    if phi2 + phi4 >= PI {
        return Err(CoreError::DegenerateGeometry("phi2 + phi4 >= pi"));
    }
    Ok(spherical_cosine(PI - phi2 - phi4, beta1, phi5))
}

fn spherical_cosine(side_a: f64, side_b: f64, included: f64) -> f64 {
    let c = side_a.cos() * side_b.cos() + side_a.sin() * side_b.sin() * included.cos();
    c.clamp(-1.0, 1.0).acos()
}

/// Directly measured `∠(n_i, x_{i+1} − x_i)`.
pub fn measured_mu(f: &TriangleFrame) -> Result<f64> {
    angle(&f.n_i, &(f.x_next - f.x_i))
}

/// μ from the spherical law of cosines at `x_i`, using the dihedral between
/// the plane of `(x_i p, n_i)` and the second triangle along `x_i p`.
pub fn dihedral_mu(f: &TriangleFrame) -> Result<f64> {
    let e1 = f.p - f.x_i;
    let e2 = f.x_next - f.x_i;
    let phi6 = angle(&e1, &e2)?;
    let beta1 = angle(&f.n_i, &e1)?;
    let dihedral = angle(&e1.cross(&f.n_i), &e1.cross(&e2))?;
    Ok(spherical_cosine(phi6, beta1, dihedral))
}

/// Result of aligning point set `b` onto `a` with orthogonal Procrustes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcrustesFit {
    /// Best proper rotation taking centered `b` onto centered `a`.
    pub rotation: Matrix3<f64>,
    /// Max point residual under `rotation`.
    pub residual: f64,
    /// Max point residual under the best improper (mirroring) transform.
    pub mirror_residual: f64,
}

/// Orthogonal Procrustes (Kabsch) fit of `b` onto `a` after centering both.
pub fn procrustes(a: &[Vec3], b: &[Vec3]) -> Result<ProcrustesFit> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CoreError::Dimension(format!(
            "point sets of size {} and {}",
            a.len(),
            b.len()
        )));
    }
    let centroid = |s: &[Vec3]| s.iter().fold(Vec3::zeros(), |acc, p| acc + p) / s.len() as f64;
    let (ca, cb) = (centroid(a), centroid(b));
    let mut h = Matrix3::zeros();
    for (pa, pb) in a.iter().zip(b) {
        h += (pb - cb) * (pa - ca).transpose();
    }
    let svd = SVD::new(h, true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v requested");
    let v = v_t.transpose();
    let d = (v * u.transpose()).determinant().signum();
    let weakest = svd.singular_values.imin();

    let fit = |flip: f64| {
        let mut diag = Matrix3::identity();
        diag[(weakest, weakest)] = flip;
        let r = v * diag * u.transpose();
        let residual = a
            .iter()
            .zip(b)
            .map(|(pa, pb)| (r * (pb - cb) - (pa - ca)).norm())
            .fold(0.0, f64::max);
        (r, residual)
    };
    let (rotation, residual) = fit(d);
    let (_, mirror_residual) = fit(-d);
    Ok(ProcrustesFit {
        rotation,
        residual,
        mirror_residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Congruence {
    Congruent,
    NotCongruent,
}

fn neighborhood_points(cloud: &PointCloud, nbhd: &Neighborhood) -> Result<Vec<Vec3>> {
    let normals = normals_of(cloud)?;
    let slots = std::iter::once(nbhd.reference_index).chain(nbhd.neighbor_indices.iter().copied());
    let mut pts: Vec<Vec3> = slots.clone().map(|i| cloud.points[i]).collect();
    pts.extend(slots.map(|i| cloud.points[i] + normals[i]));
    Ok(pts)
}

/// Procrustes fit between two neighborhoods, slot by slot, including the
/// tips of their normals.
pub fn neighborhood_fit(
    cloud_a: &PointCloud,
    nbhd_a: &Neighborhood,
    cloud_b: &PointCloud,
    nbhd_b: &Neighborhood,
) -> Result<ProcrustesFit> {
    if nbhd_a.k() != nbhd_b.k() {
        return Err(CoreError::Dimension(format!(
            "neighborhoods of size {} and {}",
            nbhd_a.k(),
            nbhd_b.k()
        )));
    }
    procrustes(
        &neighborhood_points(cloud_a, nbhd_a)?,
        &neighborhood_points(cloud_b, nbhd_b)?,
    )
}

/// Whether a proper rotation aligns neighborhood `b` onto `a` within
/// [`CONGRUENCE_TOL`].
pub fn congruence_oracle(
    cloud_a: &PointCloud,
    nbhd_a: &Neighborhood,
    cloud_b: &PointCloud,
    nbhd_b: &Neighborhood,
) -> Result<Congruence> {
    let fit = neighborhood_fit(cloud_a, nbhd_a, cloud_b, nbhd_b)?;
    Ok(if fit.residual < CONGRUENCE_TOL {
        Congruence::Congruent
    } else {
        Congruence::NotCongruent
    })
}
