//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `SKCK`, version `u16`, config text as
//! `u32` length + UTF-8 bytes, then one record per tensor until end of file:
//! `u32` name length + UTF-8 name, dtype `u8` (0 = f32, 1 = f64), rank `u8`,
//! dims as `u32`, frozen flag `u8`, raw data.

use std::fs;
use std::path::Path;

use super::params::ParamStore;
use super::tensor::{Scalar, Tensor};
use super::NnError;

pub const MAGIC: &[u8; 4] = b"SKCK";
pub const VERSION: u16 = 1;

/// Serializes a store. Every tensor is written with the store's dtype.
pub fn encode<T: Scalar>(config_text: &str, store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    out.extend_from_slice(config_text.as_bytes());
    for (name, p) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE);
        out.push(p.tensor.shape().len() as u8);
        for d in p.tensor.shape() {
            out.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        out.push(p.frozen as u8);
        for v in p.tensor.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], NnError> {
        if self.pos + n > self.bytes.len() {
            return Err(NnError::Checkpoint(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8, NnError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16, NnError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String, NnError> {
        let n = self.u32(what)? as usize;
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| NnError::Checkpoint(format!("{what} is not UTF-8")))
    }
}

fn read_values<T: Scalar, S: Scalar>(raw: &[u8]) -> Vec<T> {
    raw.chunks(S::BYTES).map(|c| T::of(S::read_le(c).f64())).collect()
}

/// Parses a checkpoint, converting every tensor to `T`.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<(String, ParamStore<T>), NnError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = cur.u16("version")?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let config = cur.string("config text")?;
    let mut store = ParamStore::new();
    while cur.pos < bytes.len() {
        let name = cur.string("tensor name")?;
        let dtype = cur.u8("dtype")?;
        let rank = cur.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("dims")? as usize);
        }
        let frozen = match cur.u8("frozen flag")? {
            0 => false,
            1 => true,
            other => return Err(NnError::Checkpoint(format!("bad frozen flag {other} for `{name}`"))),
        };
        let count: usize = shape.iter().product();
        let data = match dtype {
            0 => read_values::<T, f32>(cur.take(count * 4, &name)?),
            1 => read_values::<T, f64>(cur.take(count * 8, &name)?),
            other => return Err(NnError::Checkpoint(format!("unknown dtype {other} for `{name}`"))),
        };
        store.insert(name, Tensor::new(shape, data)?, frozen)?;
    }
    Ok((config, store))
}

pub fn save<T: Scalar>(path: &Path, config_text: &str, store: &ParamStore<T>) -> Result<(), NnError> {
    fs::write(path, encode(config_text, store)).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
}

pub fn load<T: Scalar>(path: &Path) -> Result<(String, ParamStore<T>), NnError> {
    let bytes = fs::read(path).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))?;
    decode(&bytes).map_err(|e| NnError::Checkpoint(format!("{}: {e}", path.display())))
}
