//! Proper rigid rotations and the two random rotation distributions used by
//! the train/test protocols.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};

/// Orthogonal 3×3 matrix with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

/// Which rotation distribution to draw from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RotationMode {
    /// No rotation (identity).
    None,
    /// Uniform angle about the z (gravity) axis.
    Z,
    /// Haar-uniform over SO(3).
    So3,
}

impl RotationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RotationMode::None => "none",
            RotationMode::Z => "z",
            RotationMode::So3 => "so3",
        }
    }
}

impl fmt::Display for RotationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RotationMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(RotationMode::None),
            "z" | "z-axis" => Ok(RotationMode::Z),
            "so3" => Ok(RotationMode::So3),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown rotation mode '{other}' (expected none, z, so3)"
            ))),
        }
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix after checking orthogonality and orientation to 1e-9.
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let r = Rotation(m);
        if r.orthogonality_error() > 1e-9 || (m.determinant() - 1.0).abs() > 1e-9 {
            return Err(CoreError::InvalidArgument(
                "matrix is not a proper rotation".into(),
            ));
        }
        Ok(r)
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Rotation {
        Rotation(self.0 * other.0)
    }

    /// Largest entry of |R Rᵀ − I|.
    pub fn orthogonality_error(&self) -> f64 {
        (self.0 * self.0.transpose() - Matrix3::identity()).abs().max()
    }

    pub fn determinant(&self) -> f64 {
        self.0.determinant()
    }

    /// Draws one rotation from `mode` using `rng`.
    pub fn sample<R: Rng + ?Sized>(mode: RotationMode, rng: &mut R) -> Rotation {
        match mode {
            RotationMode::None => Rotation::identity(),
            RotationMode::Z => Rotation::about_z(rng.random::<f64>() * TAU),
            RotationMode::So3 => {
                // A normalized isotropic Gaussian 4-vector is uniform on S³,
                // which makes the unit quaternion Haar-distributed.
                loop {
                    let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
                    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 1e-6 {
                        let unit = UnitQuaternion::from_quaternion(Quaternion::new(
                            q[0], q[1], q[2], q[3],
                        ));
                        return Rotation(unit.to_rotation_matrix().into_inner());
                    }
                }
            }
        }
    }
}

/// Deterministic random rotation for a seed.
pub fn random_rotation(mode: RotationMode, seed: u64) -> Rotation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Rotation::sample(mode, &mut rng)
}
