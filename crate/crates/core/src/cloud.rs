//! Point cloud container and the two ASCII ingest formats.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{CoreError, Result};
use crate::rotation::Rotation;
use crate::Vec3;

/// Tolerance on the Euclidean norm of stored normals.
pub const NORMAL_TOLERANCE: f64 = 1e-6;

/// One object sample: positions, optional unit normals, optional label.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub normals: Option<Vec<Vec3>>,
    pub label: Option<usize>,
}

/// On-disk formats accepted by [`load_cloud`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// Whitespace separated, 3 or 6 floats per line, `#` comments.
    XyzAscii,
    /// ASCII OFF; only the vertex block is read.
    Off,
}

impl CloudFormat {
    /// Guess the format from a file extension, defaulting to xyz-ascii.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("off") => CloudFormat::Off,
            _ => CloudFormat::XyzAscii,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz" | "xyz-ascii" => Ok(CloudFormat::XyzAscii),
            "off" => Ok(CloudFormat::Off),
            other => Err(CoreError::InvalidArgument(format!(
                "unknown cloud format '{other}'"
            ))),
        }
    }
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            normals: None,
            label: None,
        }
    }

    /// Builds a cloud with normals, checking lengths and unit norms.
    pub fn with_normals(points: Vec<Vec3>, normals: Vec<Vec3>) -> Result<Self> {
        let cloud = Self {
            points,
            normals: Some(normals),
            label: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(normals) = &self.normals {
            if normals.len() != self.points.len() {
                return Err(CoreError::Dimension(format!(
                    "{} normals for {} points",
                    normals.len(),
                    self.points.len()
                )));
            }
            if let Some((i, n)) = normals
                .iter()
                .enumerate()
                .find(|(_, n)| (n.norm() - 1.0).abs() > NORMAL_TOLERANCE)
            {
                return Err(CoreError::Dimension(format!(
                    "normal {i} has norm {} (expected unit length)",
                    n.norm()
                )));
            }
        }
        Ok(())
    }

    pub fn centroid(&self) -> Result<Vec3> {
        if self.points.is_empty() {
            return Err(CoreError::EmptyCloud);
        }
        let sum = self.points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
        Ok(sum / self.points.len() as f64)
    }

    /// Sub-cloud made of `indices`, in that order. Normals and label follow.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        PointCloud {
            points: indices.iter().map(|&i| self.points[i]).collect(),
            normals: self
                .normals
                .as_ref()
                .map(|n| indices.iter().map(|&i| n[i]).collect()),
            label: self.label,
        }
    }

    /// Cloud rotated by `rotation`: points and normals both map through R.
    pub fn rotated(&self, rotation: &Rotation) -> PointCloud {
        apply_rotation(self, rotation)
    }

    pub fn translated(&self, offset: Vec3) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p + offset).collect(),
            normals: self.normals.clone(),
            label: self.label,
        }
    }

    /// Uniformly rescales positions; normals are unchanged.
    pub fn scaled(&self, factor: f64) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| p * factor).collect(),
            normals: self.normals.clone(),
            label: self.label,
        }
    }
}

/// Applies a rotation to every point and normal. The label is preserved.
pub fn apply_rotation(cloud: &PointCloud, rotation: &Rotation) -> PointCloud {
    let m = rotation.matrix();
    PointCloud {
        points: cloud.points.iter().map(|p| m * p).collect(),
        normals: cloud
            .normals
            .as_ref()
            .map(|n| n.iter().map(|v| m * v).collect()),
        label: cloud.label,
    }
}

pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    match format {
        CloudFormat::XyzAscii => parse_xyz(&text, path),
        CloudFormat::Off => parse_off(&text, path),
    }
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> CoreError {
    CoreError::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_floats(fields: &[&str], path: &Path, line: usize) -> Result<Vec<f64>> {
    fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| parse_error(path, line, format!("invalid number '{f}'")))
        })
        .collect()
}

/// Parses xyz-ascii text. `path` is only used in error messages.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut columns: Option<usize> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 3 && fields.len() != 6 {
            return Err(parse_error(
                path,
                line_no,
                format!("expected 3 or 6 values, found {}", fields.len()),
            ));
        }
        match columns {
            None => columns = Some(fields.len()),
            Some(c) if c != fields.len() => {
                return Err(CoreError::Dimension(format!(
                    "{}: line {line_no} has {} columns, earlier lines have {c}",
                    path.display(),
                    fields.len()
                )))
            }
            _ => {}
        }
        let v = parse_floats(&fields, path, line_no)?;
        points.push(Vec3::new(v[0], v[1], v[2]));
        if v.len() == 6 {
            let n = Vec3::new(v[3], v[4], v[5]);
            let norm = n.norm();
            if norm == 0.0 || !norm.is_finite() {
                return Err(parse_error(path, line_no, "zero-length normal"));
            }
            normals.push(n / norm);
        }
    }

    if points.is_empty() {
        return Err(CoreError::EmptyCloud);
    }
    let normals = (columns == Some(6)).then_some(normals);
    Ok(PointCloud {
        points,
        normals,
        label: None,
    })
}

/// Parses ASCII OFF (plain `OFF` or `NOFF` with per-vertex normals).
/// Face records are ignored.
pub fn parse_off(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (header_line, header) = lines
        .next()
        .ok_or_else(|| parse_error(path, 1, "missing OFF header"))?;
    let mut tokens: Vec<&str> = header.split_whitespace().collect();
    let keyword = tokens.remove(0);
    let with_normals = match keyword {
        "OFF" => false,
        "NOFF" => true,
        // Some exporters glue the counts onto the keyword: "OFF1024 2000 0".
        k if k.starts_with("OFF") => {
            tokens.insert(0, &k[3..]);
            false
        }
        _ => return Err(parse_error(path, header_line, "expected OFF header")),
    };

    let (count_line, counts) = if tokens.is_empty() {
        let (n, l) = lines
            .next()
            .ok_or_else(|| parse_error(path, header_line, "missing vertex count line"))?;
        (n, l.split_whitespace().collect::<Vec<_>>())
    } else {
        (header_line, tokens)
    };
    let vertex_count: usize = counts
        .first()
        .and_then(|c| c.parse().ok())
        .ok_or_else(|| parse_error(path, count_line, "invalid vertex count"))?;

    let width = if with_normals { 6 } else { 3 };
    let mut points = Vec::with_capacity(vertex_count);
    let mut normals = Vec::new();
    for _ in 0..vertex_count {
        let (line_no, l) = lines.next().ok_or_else(|| {
            parse_error(path, count_line, format!("expected {vertex_count} vertices"))
        })?;
        let fields: Vec<&str> = l.split_whitespace().collect();
        if fields.len() < width {
            return Err(parse_error(
                path,
                line_no,
                format!("expected {width} values per vertex, found {}", fields.len()),
            ));
        }
        let v = parse_floats(&fields[..width], path, line_no)?;
        points.push(Vec3::new(v[0], v[1], v[2]));
        if with_normals {
            let n = Vec3::new(v[3], v[4], v[5]);
            let norm = n.norm();
            if norm == 0.0 || !norm.is_finite() {
                return Err(parse_error(path, line_no, "zero-length normal"));
            }
            normals.push(n / norm);
        }
    }

    if points.is_empty() {
        return Err(CoreError::EmptyCloud);
    }
    Ok(PointCloud {
        points,
        normals: with_normals.then_some(normals),
        label: None,
    })
}

/// Serializes a cloud as xyz-ascii, with normals when present.
pub fn to_xyz_string(cloud: &PointCloud) -> String {
    let mut out = String::new();
    for (i, p) in cloud.points.iter().enumerate() {
        match &cloud.normals {
            Some(n) => {
                let n = n[i];
                writeln!(out, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z).unwrap()
            }
            None => writeln!(out, "{} {} {}", p.x, p.y, p.z).unwrap(),
        }
    }
    out
}

pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_xyz_string(cloud)).map_err(|source| CoreError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn xyz(text: &str) -> Result<PointCloud> {
        parse_xyz(text, Path::new("test.xyz"))
    }

    #[test]
    fn three_points_without_normals() {
        let c = xyz("0 0 0\n1 0 0\n0 1 0\n").unwrap();
        assert_eq!(c.len(), 3);
        assert!(c.normals.is_none());
        assert_eq!(c.points[1], Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn six_columns_carry_a_normal() {
        let c = xyz("1 2 3 0 0 1").unwrap();
        assert_eq!(c.points, vec![Vec3::new(1.0, 2.0, 3.0)]);
        assert_eq!(c.normals.unwrap(), vec![Vec3::new(0.0, 0.0, 1.0)]);
    }

    #[test]
    fn malformed_line_names_line_one() {
        let err = xyz("1 2").unwrap_err();
        match &err {
            CoreError::Parse { line, .. } => assert_eq!(*line, 1),
            other => panic!("unexpected error {other:?}"),
        }
        assert!(err.to_string().contains("line 1"));
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let c = xyz("# header\n\n0 0 0 # origin\n1 1 1\n").unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn mixed_column_counts_are_a_dimension_error() {
        let err = xyz("0 0 0\n0 0 0 0 0 1\n").unwrap_err();
        assert!(matches!(err, CoreError::Dimension(_)), "{err:?}");
    }

    #[test]
    fn bad_number_reports_its_line() {
        let err = xyz("0 0 0\n0 x 0\n").unwrap_err();
        assert!(matches!(err, CoreError::Parse { line: 2, .. }), "{err:?}");
    }

    #[test]
    fn off_vertices_only() {
        let text = "OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n";
        let c = parse_off(text, Path::new("t.off")).unwrap();
        assert_eq!(c.len(), 4);
        assert!(c.normals.is_none());
        assert_eq!(c.points[3], Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn noff_reads_vertex_normals() {
        let text = "NOFF\n2 0 0\n0 0 0 0 0 2\n1 0 0 1 0 0\n";
        let c = parse_off(text, Path::new("t.off")).unwrap();
        assert_eq!(
            c.normals.unwrap(),
            vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.0, 0.0, 0.0)]
        );
    }

    #[test]
    fn off_with_counts_glued_to_keyword() {
        let text = "OFF2 0 0\n0 0 0\n1 2 3\n";
        let c = parse_off(text, Path::new("t.off")).unwrap();
        assert_eq!(c.points[1], Vec3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn truncated_off_is_an_error() {
        let text = "OFF\n3 0 0\n0 0 0\n";
        assert!(parse_off(text, Path::new("t.off")).is_err());
    }

    #[test]
    fn identity_rotation_is_bitwise_noop() {
        let c = PointCloud::with_normals(
            vec![Vec3::new(0.1, -2.5, 3.25), Vec3::new(1e-7, 4.0, -0.3)],
            vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.6, 0.8, 0.0)],
        )
        .unwrap();
        assert_eq!(apply_rotation(&c, &Rotation::identity()), c);
    }

    #[test]
    fn quarter_turn_about_z() {
        let c = PointCloud::new(vec![Vec3::new(1.0, 0.0, 0.0)]);
        let r = Rotation::about_z(FRAC_PI_2);
        let out = apply_rotation(&c, &r);
        assert!((out.points[0] - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn xyz_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.xyz");
        let c = PointCloud::with_normals(
            vec![Vec3::new(0.1, 0.2, 0.3)],
            vec![Vec3::new(0.0, 1.0, 0.0)],
        )
        .unwrap();
        write_xyz(&path, &c).unwrap();
        assert_eq!(load_cloud(&path, CloudFormat::XyzAscii).unwrap(), c);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_cloud("/nonexistent/cloud.xyz", CloudFormat::XyzAscii).unwrap_err();
        assert!(matches!(err, CoreError::Io { .. }));
    }
}
