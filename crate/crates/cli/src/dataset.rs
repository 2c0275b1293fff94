//! Labeled datasets on disk: one subdirectory per class, sorted by name,
//! each holding one cloud file per sample. A class's label is the position
//! of its directory in that order.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use risurconv_core::cloud::{load_cloud, write_xyz, CloudFormat};
use risurconv_core::PointCloud;
use risurconv_model::geometry::ensure_normals;

pub struct Dataset {
    pub classes: Vec<String>,
    pub clouds: Vec<PointCloud>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .with_context(|| format!("reading {}", dir.display()))?;
    entries.sort();
    Ok(entries)
}

/// Loads every cloud under `dir`, estimating normals where a file has none.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let class_dirs: Vec<PathBuf> = sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        bail!("{}: no class subdirectories", dir.display());
    }
    let mut files = Vec::new();
    let mut classes = Vec::with_capacity(class_dirs.len());
    for (label, class_dir) in class_dirs.iter().enumerate() {
        let name = class_dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let members: Vec<PathBuf> = sorted_entries(class_dir)?.into_iter().filter(|p| p.is_file()).collect();
        if members.is_empty() {
            bail!("{}: class directory is empty", class_dir.display());
        }
        files.extend(members.into_iter().map(|p| (p, label)));
        classes.push(name);
    }
    let clouds = files
        .par_iter()
        .map(|(path, label)| -> Result<PointCloud> {
            let cloud = load_cloud(path, CloudFormat::from_path(path))?;
            let cloud = ensure_normals(&cloud)
                .with_context(|| format!("estimating normals for {}", path.display()))?
                .into_owned();
            Ok(cloud.with_label(*label))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { classes, clouds })
}

/// Writes `clouds` as xyz files under `dir/<label>-<class>/`. Returns the
/// number of files written.
pub fn write_dataset(dir: &Path, classes: &[&str], clouds: &[PointCloud]) -> Result<usize> {
    let mut counters = vec![0usize; classes.len()];
    let class_dir = |label: usize| dir.join(format!("{label:02}-{}", classes[label]));
    for label in 0..classes.len() {
        fs::create_dir_all(class_dir(label)).with_context(|| format!("creating {}", class_dir(label).display()))?;
    }
    for cloud in clouds {
        let label = cloud.label.context("synthetic cloud without a label")?;
        let path = class_dir(label).join(format!("{:04}.xyz", counters[label]));
        counters[label] += 1;
        write_xyz(&path, cloud)?;
    }
    Ok(clouds.len())
}
