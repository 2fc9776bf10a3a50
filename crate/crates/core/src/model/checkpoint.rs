//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian; documented in docs/formats.md):
//!
//! ```text
//! magic   8 bytes  "AMPSCKP1"
//! u32     version (currently 1)
//! u32     flags   (bit 0: trainer state present)
//! u64     config JSON length, then that many bytes (ModelConfig)
//! u64     parameter count
//! per parameter, in plan order:
//!   u64 name length, name bytes
//!   u8  rank, then rank × u64 extents
//!   numel × f64 values
//! trainer state (only if flag bit 0):
//!   u64 adam step count, u64 epochs done, u64 global step
//!   u64 entry count, per entry:
//!     u64 name length, name bytes
//!     u64 buffer length, then f64 first-moment values, f64 second-moment values
//! ```
//!
//! Values are raw f64 bit patterns, so save → load round-trips bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ModelConfig, MultimodalModel};
use crate::error::{AmpsError, Result};

const MAGIC: &[u8; 8] = b"AMPSCKP1";
const VERSION: u32 = 1;
const FLAG_TRAINER: u32 = 1;

/// Optimizer moments and loop counters carried across save/resume.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainerState {
    pub adam_t: u64,
    pub epochs_done: u64,
    pub global_step: u64,
    pub entries: Vec<MomentEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentEntry {
    pub name: String,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

pub fn save(model: &MultimodalModel, path: &Path) -> Result<()> {
    save_with_trainer(model, None, path)
}

pub fn save_with_trainer(
    model: &MultimodalModel,
    trainer: Option<&TrainerState>,
    path: &Path,
) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let flags = if trainer.is_some() { FLAG_TRAINER } else { 0 };
    w.write_all(&flags.to_le_bytes())?;

    let cfg = serde_json::to_vec(&model.config)
        .map_err(|e| AmpsError::data(format!("config serialization failed: {e}")))?;
    w.write_all(&(cfg.len() as u64).to_le_bytes())?;
    w.write_all(&cfg)?;

    w.write_all(&(model.params.len() as u64).to_le_bytes())?;
    for (_, p) in model.params.iter() {
        write_name(&mut w, &p.name)?;
        w.write_all(&[p.shape.len() as u8])?;
        for &e in &p.shape {
            w.write_all(&(e as u64).to_le_bytes())?;
        }
        write_f64s(&mut w, &p.values)?;
    }

    if let Some(t) = trainer {
        w.write_all(&t.adam_t.to_le_bytes())?;
        w.write_all(&t.epochs_done.to_le_bytes())?;
        w.write_all(&t.global_step.to_le_bytes())?;
        w.write_all(&(t.entries.len() as u64).to_le_bytes())?;
        for e in &t.entries {
            write_name(&mut w, &e.name)?;
            w.write_all(&(e.m.len() as u64).to_le_bytes())?;
            write_f64s(&mut w, &e.m)?;
            write_f64s(&mut w, &e.v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(MultimodalModel, Option<TrainerState>)> {
    let file = File::open(path)
        .map_err(|e| AmpsError::data(format!("cannot open checkpoint {}: {e}", path.display())))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| AmpsError::data("checkpoint too short for header"))?;
    if &magic != MAGIC {
        return Err(AmpsError::data("bad checkpoint magic"));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(AmpsError::data(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let flags = read_u32(&mut r)?;

    let cfg_len = read_u64(&mut r)? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes)?;
    let config: ModelConfig = serde_json::from_slice(&cfg_bytes)
        .map_err(|e| AmpsError::data(format!("bad checkpoint config: {e}")))?;

    let mut model = MultimodalModel::new(config, 0)?;
    let n = read_u64(&mut r)? as usize;
    if n != model.params.len() {
        return Err(AmpsError::data(format!(
            "checkpoint has {n} parameters, plan expects {}",
            model.params.len()
        )));
    }
    for _ in 0..n {
        let name = read_name(&mut r)?;
        let id = model
            .params
            .id(&name)
            .ok_or_else(|| AmpsError::data(format!("unknown parameter {name} in checkpoint")))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u64(&mut r)? as usize);
        }
        let param = model.params.get_mut(id);
        if shape != param.shape {
            return Err(AmpsError::data(format!(
                "parameter {name}: checkpoint shape {shape:?} vs plan {:?}",
                param.shape
            )));
        }
        param.values = read_f64s(&mut r, param.numel())?;
    }

    let trainer = if flags & FLAG_TRAINER != 0 {
        let adam_t = read_u64(&mut r)?;
        let epochs_done = read_u64(&mut r)?;
        let global_step = read_u64(&mut r)?;
        let count = read_u64(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name = read_name(&mut r)?;
            let len = read_u64(&mut r)? as usize;
            let m = read_f64s(&mut r, len)?;
            let v = read_f64s(&mut r, len)?;
            entries.push(MomentEntry { name, m, v });
        }
        Some(TrainerState {
            adam_t,
            epochs_done,
            global_step,
            entries,
        })
    } else {
        None
    };
    Ok((model, trainer))
}

/// Bitwise equality of configs and every parameter value.
pub fn models_identical(a: &MultimodalModel, b: &MultimodalModel) -> bool {
    if a.config != b.config || a.params.len() != b.params.len() {
        return false;
    }
    a.params.iter().zip(b.params.iter()).all(|((_, pa), (_, pb))| {
        pa.name == pb.name
            && pa.shape == pb.shape
            && pa.values.len() == pb.values.len()
            && pa
                .values
                .iter()
                .zip(pb.values.iter())
                .all(|(x, y)| x.to_bits() == y.to_bits())
    })
}

fn write_name<W: Write>(w: &mut W, name: &str) -> Result<()> {
    w.write_all(&(name.len() as u64).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    Ok(())
}

fn read_name<R: Read>(r: &mut R) -> Result<String> {
    let len = read_u64(r)? as usize;
    if len > 1 << 16 {
        return Err(AmpsError::data("implausible name length in checkpoint"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| AmpsError::data("non-UTF8 name in checkpoint"))
}

fn write_f64s<W: Write>(w: &mut W, vals: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(vals.len() * 8);
    for v in vals {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| AmpsError::data("checkpoint truncated in value block"))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}
