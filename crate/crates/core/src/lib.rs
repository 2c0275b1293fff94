//! Geometry side of the RISurConv toolkit.
//!
//! Everything here is computed in 64-bit floating point: point clouds and
//! their I/O, rigid rotations, normal estimation, farthest point sampling,
//! exact nearest-neighbor search, and the rotation-invariant surface
//! property (RISP) descriptor built from two triangles around every
//! neighbor of a reference point.

pub mod cloud;
pub mod error;
pub mod normals;
pub mod registry;
pub mod risp;
pub mod rotation;
pub mod sampling;

pub use cloud::PointCloud;
pub use error::{CoreError, Result};
pub use rotation::{Rotation, RotationMode};

/// Position or direction in 3-space.
pub type Vec3 = nalgebra::Vector3<f64>;
