//! Binary checkpoint: magic, version, JSON config echo, then every parameter
//! as a named `rows x cols` array of little-endian f64.

use std::path::Path;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::model::Model;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"STEMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes(model: &Model, config: &TrainConfig) -> Result<Vec<u8>> {
    let mut cfg = config.clone();
    cfg.model = model.config.clone();
    let json = serde_json::to_vec(&cfg).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_u32(&mut out, json.len());
    out.extend_from_slice(&json);
    put_u32(&mut out, model.store.len());
    for p in model.store.iter() {
        put_u32(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.rows());
        put_u32(&mut out, p.value.cols());
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Truncated {
            path: self.path.to_path_buf(),
            expected: self.pos.saturating_add(n),
            found: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn malformed(&self, reason: impl Into<String>) -> Error {
        Error::Malformed {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }
}

pub fn checkpoint_from_bytes(bytes: &[u8], path: &Path) -> Result<(Model, TrainConfig)> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    let version = r.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let len = r.u32()?;
    let config: TrainConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| r.malformed(format!("config: {e}")))?;
    let mut model = Model::new(config.model.clone())?;
    let count = r.u32()?;
    if count != model.store.len() {
        return Err(r.malformed(format!(
            "{count} parameters stored, architecture has {}",
            model.store.len()
        )));
    }
    for _ in 0..count {
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| r.malformed("parameter name is not UTF-8"))?
            .to_string();
        let (rows, cols) = (r.u32()?, r.u32()?);
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| r.malformed(format!("unknown parameter {name}")))?;
        let target = model.store.value_mut(id);
        if (target.rows(), target.cols()) != (rows, cols) {
            return Err(r.malformed(format!(
                "parameter {name} is {rows}x{cols}, expected {}x{}",
                target.rows(),
                target.cols()
            )));
        }
        let raw = r.take(rows * cols * 8)?;
        for (dst, chunk) in target.data_mut().iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(r.malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((model, config))
}

pub fn save_checkpoint(path: &Path, model: &Model, config: &TrainConfig) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(model, config)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, TrainConfig)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes, path)
}
