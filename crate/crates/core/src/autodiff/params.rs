//! Named parameter storage and the binary checkpoint format.
//!
//! Checkpoint layout: magic "MCKP", u32 version, u32 tensor count, then per
//! tensor: u32 name length + name bytes, u32 rank, u32 dims, f32 payload.
//! All integers and floats little-endian.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{self, Read as _, Write as _};
use std::path::Path;

use super::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor<F> {
    pub values: Vec<F>,
    pub shape: Vec<usize>,
}

impl<F: Real> ParamTensor<F> {
    pub fn rows(&self) -> usize {
        self.shape[0]
    }
    pub fn cols(&self) -> usize {
        if self.shape.len() > 1 {
            self.shape[1]
        } else {
            1
        }
    }
}

/// Named parameters in deterministic (sorted) order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<F> {
    tensors: BTreeMap<String, ParamTensor<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: &str, values: Vec<F>, shape: Vec<usize>) {
        debug_assert_eq!(values.len(), shape.iter().product::<usize>());
        self.tensors.insert(name.to_string(), ParamTensor { values, shape });
    }

    pub fn get(&self, name: &str) -> &ParamTensor<F> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn try_get(&self, name: &str) -> Option<&ParamTensor<F>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ParamTensor<F> {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamTensor<F>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamTensor<F>)> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Sub-store view: every tensor whose name starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> Vec<&String> {
        self.tensors.keys().filter(|n| n.starts_with(prefix)).collect()
    }
}

#[derive(Debug)]
pub enum CheckpointError {
    BadMagic,
    VersionUnsupported(u32),
    Truncated,
    NonFiniteValue,
    Io(io::Error),
}

impl fmt::Display for CheckpointError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CheckpointError::BadMagic => write!(f, "not a checkpoint file (bad magic)"),
            CheckpointError::VersionUnsupported(v) => {
                write!(f, "unsupported checkpoint version {v}")
            }
            CheckpointError::Truncated => write!(f, "checkpoint payload truncated"),
            CheckpointError::NonFiniteValue => write!(f, "checkpoint contains non-finite value"),
            CheckpointError::Io(e) => write!(f, "checkpoint io: {e}"),
        }
    }
}

impl std::error::Error for CheckpointError {}

impl From<io::Error> for CheckpointError {
    fn from(e: io::Error) -> Self {
        CheckpointError::Io(e)
    }
}

const MAGIC: &[u8; 4] = b"MCKP";
const VERSION: u32 = 1;

/// Serializes the store. Values are stored as f32 regardless of `F`.
pub fn write_checkpoint<F: Real>(store: &ParamStore<F>, path: &Path) -> Result<(), CheckpointError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.values {
            buf.extend_from_slice(&v.to_f32().to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint<F: Real>(path: &Path) -> Result<ParamStore<F>, CheckpointError> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    if cur.take(4)? != &MAGIC[..] {
        return Err(CheckpointError::BadMagic);
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CheckpointError::VersionUnsupported(version));
    }
    let count = cur.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| CheckpointError::Truncated)?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut values = Vec::with_capacity(numel);
        for _ in 0..numel {
            let v = f32::from_le_bytes(cur.take(4)?.try_into().unwrap());
            if !v.is_finite() {
                return Err(CheckpointError::NonFiniteValue);
            }
            values.push(F::from_f32(v));
        }
        store.insert(&name, values, shape);
    }
    Ok(store)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.bytes.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let mut store: ParamStore<f32> = ParamStore::new();
        store.insert("w", vec![1.0, -2.5, 3.25, 0.0], vec![2, 2]);
        store.insert("b", vec![0.5, 0.25], vec![2]);
        let p1 = dir.path().join("a.mckp");
        let p2 = dir.path().join("b.mckp");
        write_checkpoint(&store, &p1).unwrap();
        let loaded: ParamStore<f32> = read_checkpoint(&p1).unwrap();
        assert_eq!(loaded, store);
        write_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn checkpoint_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.mckp");
        std::fs::write(&p, b"XCKP\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        match read_checkpoint::<f32>(&p) {
            Err(CheckpointError::BadMagic) => {}
            other => panic!("expected BadMagic, got {other:?}"),
        }
    }
}
