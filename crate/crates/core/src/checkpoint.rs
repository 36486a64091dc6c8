//! Binary weight files: magic `IFW1`, u32 parameter count, then per
//! parameter a u32 name length, the UTF-8 name, u32 rank, u32 dims and the
//! f32 payload, all little-endian.

use std::collections::HashMap;
use std::path::Path;

use sfas_autograd::{ParamStore, Tensor};

use crate::error::CheckpointError;

const MAGIC: &[u8; 4] = b"IFW1";

pub fn encode(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + store.num_scalars() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for id in store.ids() {
        let name = store.name(id).as_bytes();
        let t = store.get(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }
}

/// Parameters in file order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let count = r.u32("parameter count")?;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32("name length")?;
        let name = String::from_utf8(r.take(len, "name")?.to_vec())
            .map_err(|_| CheckpointError::Config("parameter name is not UTF-8".into()))?;
        let rank = r.u32("rank")?;
        let shape = (0..rank).map(|_| r.u32("dims")).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let payload = r.take(n.checked_mul(4).ok_or(CheckpointError::Truncated("payload"))?, "payload")?;
        let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(&shape, data).map_err(|e| CheckpointError::Config(e.to_string()))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Config(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

/// Overwrites every parameter of `store` from `params`. Names must match
/// one-to-one and shapes exactly.
pub fn load_params(store: &mut ParamStore<f32>, params: Vec<(String, Tensor<f32>)>) -> Result<(), CheckpointError> {
    let mut by_name: HashMap<String, Tensor<f32>> = params.into_iter().collect();
    let ids: Vec<_> = store.ids().collect();
    for &id in &ids {
        let name = store.name(id).to_string();
        let t = by_name.remove(&name).ok_or_else(|| CheckpointError::MissingParameter(name.clone()))?;
        let expected = store.get(id).shape().to_vec();
        if t.shape() != expected.as_slice() {
            return Err(CheckpointError::ShapeMismatch { name, expected, found: t.shape().to_vec() });
        }
        store.get_mut(id).data_mut().copy_from_slice(t.data());
    }
    if let Some(extra) = by_name.into_keys().min() {
        return Err(CheckpointError::UnknownParameter(extra));
    }
    Ok(())
}

/// Like [`load_params`], restricted to the parameters whose names start with
/// one of `prefixes`. Everything else, in the store or the checkpoint, is
/// left alone.
pub fn load_prefixed(
    store: &mut ParamStore<f32>,
    params: Vec<(String, Tensor<f32>)>,
    prefixes: &[&str],
) -> Result<(), CheckpointError> {
    let wanted = |n: &str| prefixes.iter().any(|p| n.starts_with(p));
    let mut by_name: HashMap<String, Tensor<f32>> = params.into_iter().filter(|(n, _)| wanted(n)).collect();
    let ids: Vec<_> = store.ids().filter(|&id| wanted(store.name(id))).collect();
    for id in ids {
        let name = store.name(id).to_string();
        let t = by_name.remove(&name).ok_or_else(|| CheckpointError::MissingParameter(name.clone()))?;
        let expected = store.get(id).shape().to_vec();
        if t.shape() != expected.as_slice() {
            return Err(CheckpointError::ShapeMismatch { name, expected, found: t.shape().to_vec() });
        }
        store.get_mut(id).data_mut().copy_from_slice(t.data());
    }
    if let Some(extra) = by_name.into_keys().min() {
        return Err(CheckpointError::UnknownParameter(extra));
    }
    Ok(())
}

pub fn save(path: &Path, store: &ParamStore<f32>) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(store)).map_err(|source| CheckpointError::Io { path: path.into(), source })
}

pub fn read(path: &Path) -> Result<Vec<(String, Tensor<f32>)>, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.into(), source })?;
    decode(&bytes)
}
