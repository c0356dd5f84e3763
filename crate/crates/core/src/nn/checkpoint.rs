//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GBSU"  u16 version
//! repeated until EOF:
//!   u16 name_len, name bytes (UTF-8), u8 rank, rank x u32 dims, f32 payload
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::params::ParamStore;
use super::tensor::{Element, Shape, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GBSU";
pub const VERSION: u16 = 1;

pub fn encode<T: Element>(store: &ParamStore<T>) -> Vec<u8> {
    let mut buf = Vec::with_capacity(6 + store.num_elements() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let dims = store.dims(id);
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(dims.len() as u8);
        for &d in dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in store.get(id).data() {
            buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }
}

/// Parses a checkpoint; `origin` only labels errors.
pub fn decode(bytes: &[u8], origin: &Path) -> Result<ParamStore<f32>> {
    let bad = |reason: &str| Error::format(origin, reason);
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4) != Some(MAGIC.as_slice()) {
        return Err(bad("magic mismatch, not a GBSU checkpoint"));
    }
    let version = u16::from_le_bytes(cur.take(2).ok_or_else(|| bad("truncated header"))?.try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported checkpoint version {version}")));
    }
    let mut store = ParamStore::new();
    while cur.pos < bytes.len() {
        let name_len = u16::from_le_bytes(cur.take(2).ok_or_else(|| bad("truncated record"))?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(cur.take(name_len).ok_or_else(|| bad("truncated name"))?)
            .map_err(|_| bad("parameter name is not UTF-8"))?
            .to_string();
        let rank = cur.take(1).ok_or_else(|| bad("truncated rank"))?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            let d = u32::from_le_bytes(cur.take(4).ok_or_else(|| bad("truncated dims"))?.try_into().unwrap());
            dims.push(d as usize);
        }
        let numel: usize = dims.iter().product();
        let payload = cur.take(numel * 4).ok_or_else(|| bad(&format!("truncated payload for {name}")))?;
        let data: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let shape = tensor_shape(&dims).ok_or_else(|| bad(&format!("unsupported rank {rank} for {name}")))?;
        let tensor = Tensor::from_vec(shape, data).map_err(|e| bad(&e.to_string()))?;
        store.insert(name, dims, tensor).map_err(|e| bad(&e.to_string()))?;
    }
    Ok(store)
}

/// Maps logical dims onto the rank-4 storage shape.
fn tensor_shape(dims: &[usize]) -> Option<Shape> {
    match *dims {
        [] => Some(Shape::scalar()),
        [a] => Some(Shape::new(a, 1, 1, 1)),
        [a, b] => Some(Shape::new(a, b, 1, 1)),
        [a, b, c] => Some(Shape::new(a, b, c, 1)),
        [a, b, c, d] => Some(Shape::new(a, b, c, d)),
        _ => None,
    }
}

pub fn save<T: Element>(store: &ParamStore<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path.as_ref())?;
    f.write_all(&encode(store))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ParamStore<f32>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes, path)
}

/// Copies values from `loaded` into `target`, requiring identical names and dims.
pub fn restore_into(target: &mut ParamStore<f32>, loaded: &ParamStore<f32>, origin: &Path) -> Result<()> {
    if target.len() != loaded.len() {
        return Err(Error::format(
            origin,
            format!("checkpoint has {} parameters, model expects {}", loaded.len(), target.len()),
        ));
    }
    for id in target.ids().collect::<Vec<_>>() {
        let name = target.name(id).to_string();
        let src = loaded
            .id(&name)
            .ok_or_else(|| Error::format(origin, format!("missing parameter {name}")))?;
        if loaded.dims(src) != target.dims(id) {
            return Err(Error::format(
                origin,
                format!("parameter {name} has dims {:?}, expected {:?}", loaded.dims(src), target.dims(id)),
            ));
        }
        target.get_mut(id).data_mut().copy_from_slice(loaded.get(src).data());
    }
    Ok(())
}
