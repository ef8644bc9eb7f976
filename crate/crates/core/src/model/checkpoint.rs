use std::collections::HashMap;
use std::path::Path;

use crate::binio::{put_f32s, put_u32, ByteReader};
use crate::error::{Error, Result};
use crate::ops::RunningStats;
use crate::tensor::{Real, Tensor};

use super::config::ModelConfig;
use super::state::ModelState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ADLW";
const VERSION: u32 = 1;

fn put_record(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[Real]) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len() as u32);
    for &d in shape {
        put_u32(out, d as u32);
    }
    put_f32s(out, data.iter().map(|&v| v as f32));
}

/// Serializes parameters and batch-norm running statistics as float32.
pub fn encode_checkpoint(state: &ModelState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, VERSION);
    let header = format!("{}seed={}\n", state.config().to_text(), state.seed());
    put_u32(&mut out, header.len() as u32);
    out.extend_from_slice(header.as_bytes());
    let slots = state.stats_slots();
    put_u32(&mut out, (state.parameters().len() + 2 * slots.len()) as u32);
    for p in state.parameters() {
        put_record(&mut out, &p.name, p.tensor.shape(), p.tensor.data());
    }
    for s in slots {
        let c = [s.stats.channels()];
        put_record(&mut out, &format!("{}.running_mean", s.name), &c, &s.stats.mean);
        put_record(&mut out, &format!("{}.running_var", s.name), &c, &s.stats.var);
    }
    out
}

/// Parses a checkpoint; the record set must match the stored config exactly.
pub fn decode_checkpoint(bytes: &[u8], source: &str) -> Result<ModelState> {
    let mut r = ByteReader::new(bytes, source);
    r.magic(CHECKPOINT_MAGIC)?;
    let at = r.offset();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(r.error(at, format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32("config length")? as usize;
    let at = r.offset();
    let text = std::str::from_utf8(r.take(len, "config text")?)
        .map_err(|_| r.error(at, "config text is not UTF-8"))?;
    let (config, extra) = ModelConfig::from_text(text)?;
    let mut seed = None;
    for (k, v) in extra {
        match k.as_str() {
            "seed" => seed = Some(v.parse::<u64>().map_err(|_| r.error(at, format!("bad seed '{v}'")))?),
            _ => return Err(r.error(at, format!("unknown checkpoint header key '{k}'"))),
        }
    }
    let seed = seed.ok_or_else(|| r.error(at, "checkpoint header has no seed"))?;
    let mut state = ModelState::new(config, seed)?;

    let count = r.u32("record count")? as usize;
    let mut records: HashMap<String, (usize, Vec<usize>, Vec<f32>)> = HashMap::with_capacity(count);
    for _ in 0..count {
        let at = r.offset();
        let n = r.u32("record name length")? as usize;
        let name = std::str::from_utf8(r.take(n, "record name")?)
            .map_err(|_| r.error(at, "record name is not UTF-8"))?
            .to_string();
        let rank = r.u32("record rank")? as usize;
        if rank > 8 {
            return Err(r.error(at, format!("record '{name}' has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u32("record dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| r.error(at, format!("record '{name}' size overflows")))?;
        let data = r.f32_vec(len, "record data")?;
        if records.insert(name.clone(), (at, shape, data)).is_some() {
            return Err(r.error(at, format!("duplicate record '{name}'")));
        }
    }
    r.finish()?;

    let mut take = |name: &str, shape: &[usize]| -> Result<Vec<Real>> {
        let (at, got, data) = records
            .remove(name)
            .ok_or_else(|| Error::Contract(format!("{source}: checkpoint is missing '{name}'")))?;
        if got != shape {
            return Err(r.error(at, format!("record '{name}' has shape {got:?}, expected {shape:?}")));
        }
        Ok(data.into_iter().map(Real::from).collect())
    };
    let params = state
        .parameters()
        .iter()
        .map(|p| Tensor::new(p.tensor.shape().to_vec(), take(&p.name, p.tensor.shape())?))
        .collect::<Result<Vec<_>>>()?;
    let stats = state
        .stats_slots()
        .iter()
        .map(|s| {
            let c = [s.stats.channels()];
            Ok(RunningStats {
                mean: take(&format!("{}.running_mean", s.name), &c)?,
                var: take(&format!("{}.running_var", s.name), &c)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(orphan) = records.keys().min() {
        return Err(Error::Contract(format!(
            "{source}: checkpoint has record '{orphan}' not in {}",
            state.config().name()
        )));
    }
    state.restore(params, stats)?;
    Ok(state)
}

pub fn save_checkpoint(path: &Path, state: &ModelState) -> Result<()> {
    std::fs::write(path, encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}
