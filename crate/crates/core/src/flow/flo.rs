use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::FlowField;
use crate::error::{Error, FloError, Result};

/// `.flo` magic, spelling "PIEH" in little-endian bytes.
pub const FLO_MAGIC: f32 = 202021.25;

const HEADER_LEN: usize = 12;

/// Writes `magic, width, height` then interleaved `(u, v)` as little-endian
/// 32-bit values.
pub fn write_flo<W: Write>(flow: &FlowField, mut sink: W) -> Result<()> {
    if flow.u.iter().chain(&flow.v).any(|x| !x.is_finite()) {
        return Err(FloError::NonFinite.into());
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + flow.u.len() * 8);
    buf.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    buf.extend_from_slice(&(flow.width as i32).to_le_bytes());
    buf.extend_from_slice(&(flow.height as i32).to_le_bytes());
    for (u, v) in flow.u.iter().zip(&flow.v) {
        buf.extend_from_slice(&(*u as f32).to_le_bytes());
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    sink.write_all(&buf).map_err(|e| Error::io("<flo sink>", e))
}

pub fn read_flo<R: Read>(mut source: R) -> Result<FlowField> {
    let mut bytes = Vec::new();
    source
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io("<flo source>", e))?;
    parse(&bytes)
}

fn le_f32(b: &[u8]) -> f32 {
    f32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn le_i32(b: &[u8]) -> i32 {
    i32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

fn parse(bytes: &[u8]) -> Result<FlowField> {
    if bytes.len() < 4 {
        return Err(FloError::Truncated {
            expected: HEADER_LEN,
            got: bytes.len(),
        }
        .into());
    }
    let magic = le_f32(bytes);
    if magic != FLO_MAGIC {
        return Err(FloError::BadMagic(magic).into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(FloError::Truncated {
            expected: HEADER_LEN,
            got: bytes.len(),
        }
        .into());
    }
    let (width, height) = (le_i32(&bytes[4..]), le_i32(&bytes[8..]));
    if width <= 0 || height <= 0 {
        return Err(FloError::BadDimensions { width, height }.into());
    }
    let n = width as usize * height as usize;
    let expected = HEADER_LEN + n * 8;
    if bytes.len() < expected {
        return Err(FloError::Truncated {
            expected,
            got: bytes.len(),
        }
        .into());
    }
    let mut u = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    for px in bytes[HEADER_LEN..expected].chunks_exact(8) {
        u.push(le_f32(&px[..4]) as f64);
        v.push(le_f32(&px[4..]) as f64);
    }
    FlowField::new(width as usize, height as usize, u, v).map_err(|_| FloError::NonFinite.into())
}

pub fn write_flo_file(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_flo(flow, &mut buf)?;
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_flo_file(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes)
}
