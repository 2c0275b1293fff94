use crate::cloud::PointCloud;
use crate::error::{CoreError, Result};
use crate::registry::Registry;
use crate::sampling::Neighborhood;
use crate::Vec3;

use super::{
    build_frames, extended_risp, normals_of, offset_slot, risp, standard_row, AngleConvention,
    RispMatrix, RowScope, TriangleFrame, EXTENDED_COLUMNS, STANDARD_COLUMNS,
};

/// A per-neighbor surface descriptor: maps a neighborhood to a `K × C` block.
pub trait SurfaceDescriptor: Send + Sync {
    fn name(&self) -> &'static str;

    fn column_names(&self) -> Vec<String>;

    fn columns(&self) -> usize {
        self.column_names().len()
    }

    /// Smallest neighborhood size the descriptor is defined for.
    fn min_neighbors(&self) -> usize {
        3
    }

    fn describe(&self, cloud: &PointCloud, nbhd: &Neighborhood) -> Result<RispMatrix>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DescriptorOptions {
    /// Number of triangles built around each neighbor (1 to 4).
    pub surfaces: usize,
}

impl Default for DescriptorOptions {
    fn default() -> Self {
        Self { surfaces: 2 }
    }
}

fn require_two_surfaces(name: &str, opts: &DescriptorOptions) -> Result<()> {
    if opts.surfaces != 2 {
        return Err(CoreError::InvalidArgument(format!(
            "descriptor '{name}' is only defined for 2 surfaces, got {}",
            opts.surfaces
        )));
    }
    Ok(())
}

/// Registry of descriptor variants by name:
///
/// | name          | columns                                   |
/// |---------------|-------------------------------------------|
/// | `standard-14` | all 14 (or the multi-surface layout when `surfaces ≠ 2`) |
/// | `extended-16` | standard plus λ, μ                        |
/// | `distance-off`| standard without L0                       |
/// | `angles-only` | α, β, θ, γ                                |
/// | `euclid-only` | L0, φ1…φ5                                 |
pub fn descriptor_registry() -> Registry<dyn SurfaceDescriptor, DescriptorOptions> {
    let mut reg: Registry<dyn SurfaceDescriptor, DescriptorOptions> =
        Registry::new("descriptor variant");
    reg.register("standard-14", |o| match o.surfaces {
        2 => Ok(Box::new(StandardRisp)),
        s => Ok(Box::new(MultiSurfaceRisp::new(s)?)),
    });
    reg.register("extended-16", |o| {
        require_two_surfaces("extended-16", o)?;
        Ok(Box::new(ExtendedRisp))
    });
    reg.register("distance-off", |o| {
        require_two_surfaces("distance-off", o)?;
        Ok(Box::new(ColumnSubset::DISTANCE_OFF))
    });
    reg.register("angles-only", |o| {
        require_two_surfaces("angles-only", o)?;
        Ok(Box::new(ColumnSubset::ANGLES_ONLY))
    });
    reg.register("euclid-only", |o| {
        require_two_surfaces("euclid-only", o)?;
        Ok(Box::new(ColumnSubset::EUCLID_ONLY))
    });
    reg
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StandardRisp;

impl SurfaceDescriptor for StandardRisp {
    fn name(&self) -> &'static str {
        "standard-14"
    }

    fn column_names(&self) -> Vec<String> {
        STANDARD_COLUMNS.iter().map(|s| s.to_string()).collect()
    }

    fn describe(&self, cloud: &PointCloud, nbhd: &Neighborhood) -> Result<RispMatrix> {
        risp(cloud, nbhd)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExtendedRisp;

impl SurfaceDescriptor for ExtendedRisp {
    fn name(&self) -> &'static str {
        "extended-16"
    }

    fn column_names(&self) -> Vec<String> {
        STANDARD_COLUMNS
            .iter()
            .chain(EXTENDED_COLUMNS.iter())
            .map(|s| s.to_string())
            .collect()
    }

    fn describe(&self, cloud: &PointCloud, nbhd: &Neighborhood) -> Result<RispMatrix> {
        extended_risp(cloud, nbhd)
    }
}

/// The standard descriptor restricted to a fixed subset of its columns.
#[derive(Debug, Clone, Copy)]
pub struct ColumnSubset {
    name: &'static str,
    keep: &'static [usize],
}

impl ColumnSubset {
    pub const DISTANCE_OFF: ColumnSubset = ColumnSubset {
        name: "distance-off",
        keep: &[1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13],
    };
    pub const ANGLES_ONLY: ColumnSubset = ColumnSubset {
        name: "angles-only",
        keep: &[6, 7, 8, 9, 10, 11, 12, 13],
    };
    pub const EUCLID_ONLY: ColumnSubset = ColumnSubset {
        name: "euclid-only",
        keep: &[0, 1, 2, 3, 4, 5],
    };
}

impl SurfaceDescriptor for ColumnSubset {
    fn name(&self) -> &'static str {
        self.name
    }

    fn column_names(&self) -> Vec<String> {
        self.keep.iter().map(|&c| STANDARD_COLUMNS[c].to_string()).collect()
    }

    fn describe(&self, cloud: &PointCloud, nbhd: &Neighborhood) -> Result<RispMatrix> {
        Ok(risp(cloud, nbhd)?.select_columns(self.keep))
    }
}

/// Descriptor over 1 to 4 triangles per neighbor.
///
/// Triangle partners of `x_i` are taken at slot offsets −1, +1, +2, −2 in
/// that order. One surface keeps only the first triangle's properties
/// (L0, φ1, φ3, α1, α2, β1, β2, θ1, θ2). Two surfaces is the standard
/// layout. Each further partner `x_o` appends the second-triangle pattern
/// measured against it: ∠(x_o p, x_i p), ∠(x_o p, x_o x_i), the dihedral
/// to the first triangle, ∠(n_o, x_o x_i), ∠(n_o, x_o p).
#[derive(Debug, Clone, Copy)]
pub struct MultiSurfaceRisp {
    surfaces: usize,
}

const PARTNER_OFFSETS: [isize; 4] = [-1, 1, 2, -2];
const SINGLE_SURFACE_COLUMNS: [usize; 9] = [0, 1, 3, 6, 7, 8, 9, 10, 11];

impl MultiSurfaceRisp {
    pub fn new(surfaces: usize) -> Result<Self> {
        if !(1..=4).contains(&surfaces) {
            return Err(CoreError::InvalidArgument(format!(
                "surface count must be in 1..=4, got {surfaces}"
            )));
        }
        Ok(Self { surfaces })
    }

    pub fn surfaces(&self) -> usize {
        self.surfaces
    }
}

impl SurfaceDescriptor for MultiSurfaceRisp {
    fn name(&self) -> &'static str {
        match self.surfaces {
            1 => "surfaces-1",
            2 => "surfaces-2",
            3 => "surfaces-3",
            _ => "surfaces-4",
        }
    }

    fn column_names(&self) -> Vec<String> {
        if self.surfaces == 1 {
            return SINGLE_SURFACE_COLUMNS
                .iter()
                .map(|&c| STANDARD_COLUMNS[c].to_string())
                .collect();
        }
        let mut names: Vec<String> = STANDARD_COLUMNS.iter().map(|s| s.to_string()).collect();
        for s in 3..=self.surfaces {
            for base in ["phi_a", "phi_b", "dihedral", "gamma1", "gamma2"] {
                names.push(format!("{base}_s{s}"));
            }
        }
        names
    }

    fn min_neighbors(&self) -> usize {
        // Partners at ±2 must be distinct from those at ±1 and from x_i.
        if self.surfaces >= 3 {
            5
        } else {
            3
        }
    }

    fn describe(&self, cloud: &PointCloud, nbhd: &Neighborhood) -> Result<RispMatrix> {
        let k = nbhd.k();
        if k < self.min_neighbors() {
            return Err(CoreError::TooFewNeighbors(k, self.min_neighbors()));
        }
        let normals = normals_of(cloud)?;
        let frames = build_frames(cloud, nbhd)?;
        let columns = self.columns();
        let mut values = Vec::with_capacity(k * columns);
        let mut degenerate = 0;
        let mut row = [0.0; 14];
        for (i, f) in frames.iter().enumerate() {
            let mut scope = RowScope::new(AngleConvention::Standard);
            standard_row(f, &mut scope, &mut row);
            if self.surfaces == 1 {
                values.extend(SINGLE_SURFACE_COLUMNS.iter().map(|&c| row[c]));
            } else {
                values.extend_from_slice(&row);
                for &offset in &PARTNER_OFFSETS[2..self.surfaces] {
                    let slot = offset_slot(k, i, offset)?;
                    let j = nbhd.neighbor_indices[slot];
                    extra_triangle(f, cloud.points[j], normals[j], &mut scope, &mut values);
                }
            }
            degenerate += scope.degenerate as usize;
        }
        Ok(RispMatrix::from_rows(k, columns, values, degenerate))
    }
}

fn extra_triangle(
    f: &TriangleFrame,
    x_o: Vec3,
    n_o: Vec3,
    scope: &mut RowScope,
    out: &mut Vec<f64>,
) {
    let o_p = f.p - x_o;
    let i_p = f.p - f.x_i;
    let o_i = f.x_i - x_o;
    let prev_p = f.p - f.x_prev;
    out.push(scope.angle(&o_p, &i_p));
    out.push(scope.angle(&o_p, &o_i));
    out.push(scope.dihedral(&o_p.cross(&i_p), &prev_p.cross(&i_p)));
    out.push(scope.angle(&n_o, &o_i));
    out.push(scope.angle(&n_o, &o_p));
}
