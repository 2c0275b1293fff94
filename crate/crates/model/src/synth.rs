//! Labeled point clouds sampled from five analytic surfaces.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use risurconv_core::{PointCloud, Vec3};

use crate::error::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeClass {
    Sphere,
    Box,
    Cylinder,
    Cone,
    Torus,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 5] = [
        ShapeClass::Sphere,
        ShapeClass::Box,
        ShapeClass::Cylinder,
        ShapeClass::Cone,
        ShapeClass::Torus,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Sphere => "sphere",
            ShapeClass::Box => "box",
            ShapeClass::Cylinder => "cylinder",
            ShapeClass::Cone => "cone",
            ShapeClass::Torus => "torus",
        }
    }

    /// Point and outward unit normal drawn uniformly by surface area, at
    /// unit scale.
    fn sample(self, rng: &mut impl Rng) -> (Vec3, Vec3) {
        match self {
            ShapeClass::Sphere => {
                let n = uniform_direction(rng);
                (n, n)
            }
            ShapeClass::Box => sample_box(rng),
            ShapeClass::Cylinder => sample_cylinder(rng),
            ShapeClass::Cone => sample_cone(rng),
            ShapeClass::Torus => sample_torus(rng),
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        ShapeClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| ModelError::Dataset(format!("unknown shape class '{s}'")))
    }
}

const BOX_HALF: [f64; 3] = [1.0, 0.7, 0.45];
const CYLINDER_RADIUS: f64 = 0.6;
const CYLINDER_HALF_HEIGHT: f64 = 0.9;
const CONE_RADIUS: f64 = 0.8;
const CONE_HEIGHT: f64 = 1.6;
const TORUS_MAJOR: f64 = 0.75;
const TORUS_MINOR: f64 = 0.3;

fn uniform_direction(rng: &mut impl Rng) -> Vec3 {
    let z: f64 = rng.random_range(-1.0..=1.0);
    let phi = rng.random::<f64>() * TAU;
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

fn sample_box(rng: &mut impl Rng) -> (Vec3, Vec3) {
    let [a, b, c] = BOX_HALF;
    // Face pairs normal to x, y, z, weighted by area.
    let areas = [b * c, a * c, a * b];
    let total: f64 = areas.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut axis = 2;
    for (i, &w) in areas.iter().enumerate() {
        if pick < w {
            axis = i;
            break;
        }
        pick -= w;
    }
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let mut p = Vec3::new(
        rng.random_range(-a..=a),
        rng.random_range(-b..=b),
        rng.random_range(-c..=c),
    );
    p[axis] = sign * BOX_HALF[axis];
    let mut n = Vec3::zeros();
    n[axis] = sign;
    (p, n)
}

fn sample_cylinder(rng: &mut impl Rng) -> (Vec3, Vec3) {
    let (r, h) = (CYLINDER_RADIUS, CYLINDER_HALF_HEIGHT);
    let side = TAU * r * 2.0 * h;
    let cap = PI * r * r;
    let phi = rng.random::<f64>() * TAU;
    let pick = rng.random::<f64>() * (side + 2.0 * cap);
    if pick < side {
        let z = rng.random_range(-h..=h);
        (
            Vec3::new(r * phi.cos(), r * phi.sin(), z),
            Vec3::new(phi.cos(), phi.sin(), 0.0),
        )
    } else {
        let sign = if pick < side + cap { 1.0 } else { -1.0 };
        let rho = r * rng.random::<f64>().sqrt();
        (
            Vec3::new(rho * phi.cos(), rho * phi.sin(), sign * h),
            Vec3::new(0.0, 0.0, sign),
        )
    }
}

fn sample_cone(rng: &mut impl Rng) -> (Vec3, Vec3) {
    let (r, h) = (CONE_RADIUS, CONE_HEIGHT);
    let slant = (r * r + h * h).sqrt();
    let side = PI * r * slant;
    let base = PI * r * r;
    let phi = rng.random::<f64>() * TAU;
    let (top, bottom) = (h / 2.0, -h / 2.0);
    if rng.random::<f64>() * (side + base) < side {
        // Fraction of the way from apex to rim; area grows linearly in it.
        let t = rng.random::<f64>().sqrt();
        let p = Vec3::new(t * r * phi.cos(), t * r * phi.sin(), top - t * h);
        let n = Vec3::new(h * phi.cos(), h * phi.sin(), r) / slant;
        (p, n)
    } else {
        let rho = r * rng.random::<f64>().sqrt();
        (
            Vec3::new(rho * phi.cos(), rho * phi.sin(), bottom),
            Vec3::new(0.0, 0.0, -1.0),
        )
    }
}

fn sample_torus(rng: &mut impl Rng) -> (Vec3, Vec3) {
    let (big, small) = (TORUS_MAJOR, TORUS_MINOR);
    // Area element is proportional to R + r cos θ.
    let theta = loop {
        let theta = rng.random::<f64>() * TAU;
        if rng.random::<f64>() * (big + small) <= big + small * theta.cos() {
            break theta;
        }
    };
    let phi = rng.random::<f64>() * TAU;
    let n = Vec3::new(theta.cos() * phi.cos(), theta.cos() * phi.sin(), theta.sin());
    let center = Vec3::new(big * phi.cos(), big * phi.sin(), 0.0);
    (center + small * n, n)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    /// Points per cloud.
    pub points: usize,
    /// Standard deviation of the Gaussian added to every coordinate.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            points: 1024,
            noise_sigma: 0.01,
            seed: 0,
        }
    }
}

/// `per_class` clouds of each class in `classes`, class-major. Labels are
/// positions in `classes`. Each cloud gets a uniform random scale in
/// [0.8, 1.2]; normals are the exact surface normals at the noise-free
/// sample.
pub fn synth_dataset(classes: &[ShapeClass], per_class: usize, opts: &SynthOptions) -> Vec<PointCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let noise = Normal::new(0.0, opts.noise_sigma.max(0.0)).expect("finite sigma");
    let mut out = Vec::with_capacity(classes.len() * per_class);
    for (label, &class) in classes.iter().enumerate() {
        for _ in 0..per_class {
            let scale = rng.random_range(0.8..=1.2);
            let mut points = Vec::with_capacity(opts.points);
            let mut normals = Vec::with_capacity(opts.points);
            for _ in 0..opts.points {
                let (p, n) = class.sample(&mut rng);
                let jitter = if opts.noise_sigma > 0.0 {
                    Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng))
                } else {
                    Vec3::zeros()
                };
                points.push(p * scale + jitter);
                normals.push(n.normalize());
            }
            let cloud = PointCloud::with_normals(points, normals)
                .expect("one normal per point")
                .with_label(label);
            out.push(cloud);
        }
    }
    out
}
