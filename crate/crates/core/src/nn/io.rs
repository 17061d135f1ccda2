//! Checkpoint container for a [`ParamSet`].
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"DMPARAM1"
//! u32 tensor count
//! per tensor: u32 name length, UTF-8 name, u32 rank, u64 × rank dims
//! per tensor, in table order: f64 × product(dims)
//! ```

use std::path::Path;

use super::tensor::{ParamSet, Tensor};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"DMPARAM1";

pub fn write_params(params: &ParamSet) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend((params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend((d as u64).to_le_bytes());
        }
    }
    for (_, t) in params.iter() {
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Decode {
            offset: self.pos,
            reason: format!("truncated checkpoint: wanted {n} bytes"),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_params(bytes: &[u8]) -> Result<ParamSet> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Decode {
            offset: 0,
            reason: "not a parameter checkpoint".into(),
        });
    }
    let count = r.u32()? as usize;
    let mut table = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let at = r.pos;
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Decode {
                offset: at,
                reason: "tensor name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        table.push((name, shape));
    }
    let mut params = ParamSet::new();
    for (name, shape) in table {
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Decode {
            offset: r.pos,
            reason: "tensor size overflow".into(),
        })?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        if params.get(&name).is_some() {
            return Err(Error::Decode {
                offset: r.pos,
                reason: format!("duplicate tensor `{name}`"),
            });
        }
        params.insert(name, Tensor::new(shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::Decode {
            offset: r.pos,
            reason: "trailing bytes after checkpoint".into(),
        });
    }
    Ok(params)
}

pub fn write_params_file(path: &Path, params: &ParamSet) -> Result<()> {
    std::fs::write(path, write_params(params)).map_err(|e| Error::io(path, e))
}

pub fn read_params_file(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_params(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
