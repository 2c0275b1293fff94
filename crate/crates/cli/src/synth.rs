use anyhow::{ensure, Result};
use risurconv_model::{synth_dataset, ShapeClass, SynthOptions};
use serde_json::json;

use crate::args::SynthArgs;
use crate::config::RunConfig;
use crate::dataset::write_dataset;
use crate::emit;

pub fn run(args: &SynthArgs) -> Result<()> {
    let run = RunConfig::load(args.common.config.as_deref())?;
    let available = ShapeClass::ALL.len();
    ensure!(
        (1..=available).contains(&args.classes),
        "--classes must be between 1 and {available}, got {}",
        args.classes
    );
    ensure!(args.per_class > 0, "--per-class must be positive");
    let opts = SynthOptions {
        points: args.points.unwrap_or(run.synth.points),
        noise_sigma: args.noise.unwrap_or(run.synth.noise_sigma),
        seed: args.common.seed.unwrap_or(0),
    };
    ensure!(opts.points > 0, "--points must be positive");
    ensure!(
        opts.noise_sigma.is_finite() && opts.noise_sigma >= 0.0,
        "--noise must be finite and non-negative"
    );
    let classes = &ShapeClass::ALL[..args.classes];
    let clouds = synth_dataset(classes, args.per_class, &opts);
    let names: Vec<&str> = classes.iter().map(|c| c.name()).collect();
    let files = write_dataset(&args.out, &names, &clouds)?;
    eprintln!("wrote {files} clouds of {} points to {}", opts.points, args.out.display());
    emit(&json!({
        "out": args.out,
        "files": files,
        "classes": names,
        "per_class": args.per_class,
        "points": opts.points,
        "seed": opts.seed,
    }))
}
