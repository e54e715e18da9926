//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "PATHMPCK"
//! version    u32
//! meta_len   u32, then meta_len bytes of UTF-8 JSON
//! count      u32
//! count × {
//!     name_len u32, name (UTF-8)
//!     rank     u32 (0, 1 or 2), rank × u64 dims
//!     product(dims) × f64
//! }
//! ```
//!
//! Rank-1 tensors load as a single row and rank-0 as `1 × 1`.

use std::path::Path;

use super::params::ParamStore;
use super::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"PATHMPCK";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Free-form JSON; the model stores its configuration here.
    pub meta: serde_json::Value,
    pub entries: Vec<CheckpointEntry>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| bad(format!("truncated {what} at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, meta: serde_json::Value) -> Self {
        let entries = store
            .ids()
            .map(|id| CheckpointEntry {
                name: store.name(id).to_string(),
                tensor: store.value(id).clone(),
            })
            .collect();
        Checkpoint { meta, entries }
    }

    /// Copies every tensor into the parameter of the same name.
    ///
    /// The entry set must match the store exactly, name for name and shape
    /// for shape.
    pub fn apply_to(&self, store: &mut ParamStore) -> Result<()> {
        if self.entries.len() != store.len() {
            return Err(bad(format!(
                "checkpoint has {} tensors, model has {} parameters",
                self.entries.len(),
                store.len()
            )));
        }
        for e in &self.entries {
            let id = store
                .find(&e.name)
                .ok_or_else(|| bad(format!("unknown parameter `{}`", e.name)))?;
            let shape = store.value(id).shape();
            if shape != e.tensor.shape() {
                return Err(bad(format!(
                    "parameter `{}` has shape {:?}, checkpoint has {:?}",
                    e.name,
                    shape,
                    e.tensor.shape()
                )));
            }
            *store.value_mut(id) = e.tensor.clone();
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_vec(&self.meta).expect("JSON value serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(e.tensor.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(e.tensor.cols() as u64).to_le_bytes());
            for v in e.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| bad(format!("metadata: {e}")))?;
        let count = r.u32("tensor count")? as usize;
        let mut entries = Vec::new();
        for k in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "name")?)
                .map_err(|_| bad(format!("tensor {k}: name is not UTF-8")))?
                .to_string();
            let rank = r.u32("rank")?;
            let dims = (0..rank).map(|_| r.u64("dimension")).collect::<Result<Vec<_>>>()?;
            let (rows, cols) = match dims.as_slice() {
                [] => (1, 1),
                [n] => (1, *n),
                [a, b] => (*a, *b),
                _ => return Err(bad(format!("tensor `{name}` has rank {rank}"))),
            };
            let len = rows
                .checked_mul(cols)
                .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= r.remaining() as u64))
                .ok_or_else(|| bad(format!("tensor `{name}` of shape {dims:?} exceeds the file")))?
                as usize;
            let data = r
                .take(len * 8, "tensor data")?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let tensor = Tensor::from_vec(rows as usize, cols as usize, data)?;
            entries.push(CheckpointEntry { name, tensor });
        }
        if r.remaining() != 0 {
            return Err(bad(format!("{} trailing bytes", r.remaining())));
        }
        Ok(Checkpoint { meta, entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut store = ParamStore::new();
        store.add("a", Tensor::from_vec(2, 3, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, -7.25, 0.1]).unwrap());
        store.add("b", Tensor::zeros(0, 4));
        Checkpoint::from_store(&store, serde_json::json!({"hidden": 8}))
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let bits = |c: &Checkpoint| -> Vec<u64> { c.entries[0].tensor.data().iter().map(|v| v.to_bits()).collect() };
        assert_eq!(bits(&back), bits(&ck));
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample().to_bytes();
        for n in 0..bytes.len() {
            assert!(Checkpoint::from_bytes(&bytes[..n]).is_err(), "prefix {n}");
        }
    }

    #[test]
    fn huge_dimensions_do_not_allocate() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(b"{}");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.push(b'w');
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        bytes.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn apply_checks_names_and_shapes() {
        let ck = sample();
        let mut store = ParamStore::new();
        store.zeros("a", 2, 3);
        store.zeros("b", 0, 4);
        ck.apply_to(&mut store).unwrap();
        assert_eq!(store.value(store.find("a").unwrap()), &ck.entries[0].tensor);
        let mut wrong = ParamStore::new();
        wrong.zeros("a", 3, 2);
        wrong.zeros("b", 0, 4);
        assert!(ck.apply_to(&mut wrong).is_err());
    }
}
