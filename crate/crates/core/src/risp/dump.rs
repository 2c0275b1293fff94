//! Binary feature dump.
//!
//! Little-endian layout: magic `RISP`, then `u32` version, `u32` M
//! (reference points), `u32` K, `u32` C, then `M·K·C` `f32` values in
//! row-major `[M][K][C]` order.

use std::io::{Read, Write};

use crate::error::{CoreError, Result};

use super::RispMatrix;

pub const DUMP_MAGIC: &[u8; 4] = b"RISP";
pub const DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump {
    pub m: usize,
    pub k: usize,
    pub c: usize,
    pub values: Vec<f32>,
}

impl FeatureDump {
    pub fn get(&self, m: usize, k: usize, c: usize) -> f32 {
        self.values[(m * self.k + k) * self.c + c]
    }
}

fn io_err(e: std::io::Error) -> CoreError {
    CoreError::BadDump(e.to_string())
}

pub fn write_dump<W: Write>(mut out: W, blocks: &[RispMatrix]) -> Result<()> {
    let (k, c) = blocks.first().map_or((0, 0), |b| (b.k(), b.columns()));
    if blocks.iter().any(|b| b.k() != k || b.columns() != c) {
        return Err(CoreError::Dimension("feature blocks differ in shape".into()));
    }
    let header = [DUMP_VERSION, blocks.len() as u32, k as u32, c as u32];
    out.write_all(DUMP_MAGIC).map_err(io_err)?;
    for v in header {
        out.write_all(&v.to_le_bytes()).map_err(io_err)?;
    }
    let mut buf = Vec::with_capacity(blocks.len() * k * c * 4);
    for v in blocks.iter().flat_map(|b| b.values()) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out.write_all(&buf).map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn read_dump<R: Read>(mut input: R) -> Result<FeatureDump> {
    let mut head = [0u8; 20];
    input.read_exact(&mut head).map_err(io_err)?;
    if &head[..4] != DUMP_MAGIC {
        return Err(CoreError::BadDump("missing RISP magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(head[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    if word(0) != DUMP_VERSION {
        return Err(CoreError::BadDump(format!("unsupported version {}", word(0))));
    }
    let (m, k, c) = (word(1) as usize, word(2) as usize, word(3) as usize);
    let mut body = Vec::new();
    input.read_to_end(&mut body).map_err(io_err)?;
    if body.len() != m * k * c * 4 {
        return Err(CoreError::BadDump(format!(
            "expected {} payload bytes, found {}",
            m * k * c * 4,
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(FeatureDump { m, k, c, values })
}
