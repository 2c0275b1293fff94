use std::fs::File;
use std::io::BufWriter;

use anyhow::{bail, Context, Result};
use risurconv_core::cloud::{load_cloud, CloudFormat};
use risurconv_core::normals::estimate_normals;
use risurconv_core::risp::{describe_all, descriptor_registry, write_dump, DescriptorOptions};
use risurconv_core::sampling::{farthest_point_sample, knn};
use serde_json::json;

use crate::args::{ExtractArgs, NormalSource};
use crate::emit;

pub fn run(args: &ExtractArgs) -> Result<()> {
    let cloud = load_cloud(&args.input, CloudFormat::from_path(&args.input))?;
    let cloud = match args.normals {
        NormalSource::Given if !cloud.has_normals() => {
            bail!("{} has no normals; pass --normals estimate", args.input.display())
        }
        NormalSource::Given => cloud,
        NormalSource::Estimate => estimate_normals(&cloud, args.normal_k)?.cloud,
    };
    let descriptor = descriptor_registry().create(&args.variant, &DescriptorOptions::default())?;
    let refs = farthest_point_sample(&cloud, args.refs)?;
    let hoods = knn(&cloud, &refs, args.k)?;
    let blocks = describe_all(descriptor.as_ref(), &cloud, &hoods)?;
    let degenerate: usize = blocks.iter().map(|b| b.degenerate_rows).sum();
    if degenerate > 0 && !args.allow_degenerate {
        bail!(
            "degenerate cloud: {degenerate} of {} rows have undefined angles (coincident or collinear points)",
            refs.len() * args.k
        );
    }
    let file = File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_dump(BufWriter::new(file), &blocks)?;

    let columns = descriptor.columns();
    eprintln!(
        "wrote {}: M={} K={} C={columns} ({degenerate} degenerate rows)",
        args.out.display(),
        refs.len(),
        args.k
    );
    emit(&json!({
        "out": args.out,
        "m": refs.len(),
        "k": args.k,
        "c": columns,
        "degenerate_rows": degenerate,
    }))
}
