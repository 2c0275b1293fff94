//! Subcommand implementations behind the `risurconv` binary. Machine
//! readable results go to stdout as one JSON object per line; progress and
//! summaries go to stderr.

pub mod args;
pub mod config;
pub mod dataset;
pub mod extract;
pub mod invariance;
pub mod learn;
pub mod synth;

use std::io::Write;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::args::{Cli, Command};

/// How a successful run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// A property check ran to completion and found a violation.
    Violation,
}

/// Writes one ndjson record to stdout.
pub fn emit<T: Serialize + ?Sized>(record: &T) -> Result<()> {
    let line = serde_json::to_string(record)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").context("writing to stdout")?;
    out.flush().context("writing to stdout")
}

/// Caps the worker pool from `RISUR_THREADS`; unset means one worker per core.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("RISUR_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .with_context(|| format!("RISUR_THREADS must be a positive integer, got '{value}'"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the worker pool")
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Extract(a) => extract::run(a)?,
        Command::Train(a) => learn::train(a)?,
        Command::Eval(a) => learn::eval(a)?,
        Command::Ablate(a) => learn::ablate(a)?,
        Command::Synth(a) => synth::run(a)?,
        Command::InvarianceCheck(a) => {
            return Ok(if invariance::run(a)? {
                Outcome::Success
            } else {
                Outcome::Violation
            })
        }
    }
    Ok(Outcome::Success)
}
