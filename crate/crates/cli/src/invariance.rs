use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;

use anyhow::{Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use risurconv_core::cloud::{load_cloud, CloudFormat};
use risurconv_core::risp::{risp_with_convention, AngleConvention, RispMatrix};
use risurconv_core::sampling::{farthest_point_sample, knn};
use risurconv_core::{PointCloud, Rotation, RotationMode};
use risurconv_model::geometry::ensure_normals;
use risurconv_model::network::argmax;
use risurconv_model::{Classifier, ClassifierConfig};
use serde::Serialize;

use crate::args::InvarianceArgs;
use crate::emit;

#[derive(Debug, Serialize)]
struct Report {
    trials: usize,
    max_risp_dev: f64,
    max_logit_dev: f64,
    tol: f64,
    logit_tol: f64,
    /// Reference points whose counterpart was not sampled in the
    /// transformed cloud.
    ref_mismatches: usize,
    argmax_changes: usize,
    pass: bool,
}

/// Descriptor blocks keyed by the reference point's index in `cloud`,
/// mapped through `origin` to the untransformed storage order.
fn blocks(
    cloud: &PointCloud,
    origin: &[usize],
    refs: usize,
    k: usize,
    convention: AngleConvention,
) -> Result<HashMap<usize, RispMatrix>> {
    let picked = farthest_point_sample(cloud, refs)?;
    knn(cloud, &picked, k)?
        .iter()
        .map(|hood| Ok((origin[hood.reference_index], risp_with_convention(cloud, hood, convention)?)))
        .collect()
}

fn max_logit_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| f64::from((x - y).abs()))
        .fold(0.0, f64::max)
}

/// Runs the check and reports whether every deviation stayed within bounds.
pub fn run(args: &InvarianceArgs) -> Result<bool> {
    let cloud = load_cloud(&args.input, CloudFormat::from_path(&args.input))?;
    let cloud = ensure_normals(&cloud)?.into_owned();
    let seed = args.common.seed.unwrap_or(0);
    let net = match &args.checkpoint {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            Classifier::load(BufReader::new(file))?
        }
        None => Classifier::new(ClassifierConfig::toy(5), seed)?,
    };
    let convention = if args.debug_corrupt_angles {
        AngleConvention::ProjectedXy
    } else {
        AngleConvention::Standard
    };

    let identity: Vec<usize> = (0..cloud.len()).collect();
    let base = blocks(&cloud, &identity, args.refs, args.k, convention)?;
    let base_logits = net.logits(std::slice::from_ref(&cloud))?.remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report {
        trials: args.trials,
        max_risp_dev: 0.0,
        max_logit_dev: 0.0,
        tol: args.tol,
        logit_tol: args.logit_tol,
        ref_mismatches: 0,
        argmax_changes: 0,
        pass: false,
    };
    for _ in 0..args.trials {
        let rotation = Rotation::sample(RotationMode::So3, &mut rng);
        let mut order = identity.clone();
        order.shuffle(&mut rng);
        let moved = cloud.select(&order).rotated(&rotation);

        for (origin, block) in blocks(&moved, &order, args.refs, args.k, convention)? {
            match base.get(&origin) {
                Some(b) => report.max_risp_dev = report.max_risp_dev.max(b.max_abs_diff(&block)),
                None => report.ref_mismatches += 1,
            }
        }
        let logits = net.logits(std::slice::from_ref(&moved))?.remove(0);
        report.max_logit_dev = report.max_logit_dev.max(max_logit_diff(&base_logits, &logits));
        report.argmax_changes += usize::from(argmax(&logits) != argmax(&base_logits));
    }
    report.pass = report.max_risp_dev <= args.tol
        && report.max_logit_dev <= args.logit_tol
        && report.ref_mismatches == 0
        && report.argmax_changes == 0;
    eprintln!(
        "{} trials: max |Δ| descriptor {:.3e} (tol {:.0e}), logits {:.3e} (tol {:.0e}), {} reference mismatches, {} argmax changes: {}",
        report.trials,
        report.max_risp_dev,
        report.tol,
        report.max_logit_dev,
        report.logit_tol,
        report.ref_mismatches,
        report.argmax_changes,
        if report.pass { "ok" } else { "VIOLATED" }
    );
    emit(&report)?;
    Ok(report.pass)
}
