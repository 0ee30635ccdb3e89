//! Binary model checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "RHAR"  u32 version  u32 config_len  config (TOML, UTF-8)
//! u32 record_count
//! per record: u32 name_len  name (UTF-8)  u32 rank  u32 dims[rank]  f32 values[prod(dims)]
//! ```
//!
//! Records follow the model's canonical parameter order.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ReharModel};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"RHAR";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_checkpoint<T: Scalar>(model: &ReharModel<T>, mut sink: impl Write) -> Result<()> {
    let config = toml::to_string(&model.config).map_err(|e| bad(e.to_string()))?;
    let params = model.parameters();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes());
        }
    }
    sink.write_all(&out)
        .map_err(|e| bad(format!("write failed: {e}")))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|e| bad(format!("invalid UTF-8: {e}")))
    }
}

pub fn read_checkpoint<T: Scalar>(mut source: impl Read) -> Result<ReharModel<T>> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| bad(format!("read failed: {e}")))?;
    let mut c = Cursor {
        bytes: &bytes,
        pos: 0,
    };
    if c.take(4)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = c.u32()? as usize;
    let config: ModelConfig =
        toml::from_str(c.utf8(len)?).map_err(|e| bad(format!("embedded config: {e}")))?;
    let mut model = ReharModel::<T>::zeros(&config)?;

    let count = c.u32()? as usize;
    let mut params = model.parameters_mut();
    if count != params.len() {
        return Err(bad(format!(
            "{count} parameter records, architecture needs {}",
            params.len()
        )));
    }
    for (name, tensor) in params.iter_mut() {
        let n = c.u32()? as usize;
        let got = c.utf8(n)?;
        if got != name {
            return Err(bad(format!("expected parameter {name}, found {got}")));
        }
        let rank = c.u32()? as usize;
        let dims = (0..rank)
            .map(|_| c.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims != tensor.shape() {
            return Err(bad(format!(
                "{name}: shape {dims:?}, expected {:?}",
                tensor.shape()
            )));
        }
        for v in tensor.data_mut() {
            let x = f32::from_le_bytes(c.take(4)?.try_into().unwrap());
            *v = T::from_f64_lossy(x as f64);
        }
    }
    drop(params);
    if c.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &ReharModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<ReharModel<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes[..]).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}
