//! The train, eval, and ablate subcommands.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use risurconv_model::ablation::{ablation_sweep, study_grid};
use risurconv_model::{evaluate_protocol, train_with, Classifier, Protocol, TrainConfig};
use serde_json::json;

use crate::args::{AblateArgs, EvalArgs, ProtocolArg, TrainArgs};
use crate::config::RunConfig;
use crate::dataset::load_dataset;
use crate::emit;

impl From<ProtocolArg> for Protocol {
    fn from(p: ProtocolArg) -> Self {
        match p {
            ProtocolArg::Zz => Protocol::ZZ,
            ProtocolArg::So3so3 => Protocol::So3So3,
            ProtocolArg::Zso3 => Protocol::ZSo3,
        }
    }
}

fn save(net: &Classifier, path: &Path) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    net.save(&mut w)?;
    w.flush().with_context(|| format!("writing {}", path.display()))
}

fn train_config(run: &RunConfig, seed: Option<u64>, lr: Option<f32>, epochs: Option<usize>) -> TrainConfig {
    let mut cfg = run.train();
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.learning_rate = lr.unwrap_or(cfg.learning_rate);
    cfg.epochs = epochs.unwrap_or(cfg.epochs);
    cfg
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let run = RunConfig::load(args.common.config.as_deref())?;
    let mut cfg = train_config(&run, args.common.seed, args.lr, args.epochs);
    cfg.batch_size = args.batch_size.unwrap_or(cfg.batch_size);
    cfg.validate()?;
    let data = load_dataset(&args.data)?;
    let model = run.classifier(args.preset.as_deref(), data.classes.len())?;
    let mut net = Classifier::new(model, cfg.seed)?;
    if let Some(path) = &args.init_out {
        save(&net, path)?;
    }
    eprintln!(
        "training on {} clouds, {} classes, config {}",
        data.clouds.len(),
        data.classes.len(),
        net.config().hash()
    );
    let mut failed = None;
    let result = train_with(&mut net, &data.clouds, &cfg, |record| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  accuracy {:.3}",
            record.epoch, record.loss, record.accuracy
        );
        if let Err(e) = emit(record) {
            failed.get_or_insert(e);
        }
    });
    result?;
    if let Some(e) = failed {
        return Err(e);
    }
    save(&net, &args.out)?;
    eprintln!("saved {}", args.out.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let run = RunConfig::load(args.common.config.as_deref())?;
    let file = File::open(&args.checkpoint).with_context(|| format!("opening {}", args.checkpoint.display()))?;
    let net = Classifier::load(BufReader::new(file)).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let data = load_dataset(&args.data)?;
    let protocol = Protocol::from(args.mode);
    let resamples = args.resamples.unwrap_or(run.eval.resamples);
    let seed = args.common.seed.unwrap_or(0);
    let result = evaluate_protocol(&net, &data.clouds, protocol, resamples, seed)?;
    eprintln!(
        "{protocol}: accuracy {:.4} ± {:.4} over {} rotation draws",
        result.mean,
        result.std,
        result.accuracies.len()
    );
    emit(&json!({
        "mode": protocol,
        "accuracy": result.mean,
        "std": result.std,
        "accuracies": result.accuracies,
        "samples": data.clouds.len(),
        "config_hash": net.config().hash(),
        "seed": seed,
    }))
}

pub fn ablate(args: &AblateArgs) -> Result<()> {
    let run = RunConfig::load(args.common.config.as_deref())?;
    let cfg = train_config(&run, args.common.seed, None, args.epochs);
    cfg.validate()?;
    let train_set = load_dataset(&args.train)?;
    let test_set = load_dataset(&args.test)?;
    anyhow::ensure!(
        train_set.classes == test_set.classes,
        "train and test class directories differ"
    );
    let base = run.classifier(args.preset.as_deref(), train_set.classes.len())?;
    let runs = study_grid(&args.study, &base)?;
    let resamples = args.resamples.unwrap_or(run.eval.resamples);
    let mut failed = None;
    ablation_sweep(
        &runs,
        &train_set.clouds,
        &test_set.clouds,
        &cfg,
        args.mode.into(),
        resamples,
        |row| {
            eprintln!("{} {:<12} accuracy {:.4}", row.study, row.model, row.accuracy);
            if let Err(e) = emit(row) {
                failed.get_or_insert(e);
            }
        },
    )?;
    failed.map_or(Ok(()), Err)
}
