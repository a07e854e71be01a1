//! Named parameter store and its `TNS1` file format.
//!
//! Layout (little-endian): `TNS1`, `u32` tensor count, then per tensor a
//! `u32` name length, UTF-8 name bytes, `u32` rank, `rank` x `u32` extents
//! and the `f32` values.

use std::path::Path;

use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

pub const TNS_MAGIC: &[u8; 4] = b"TNS1";

pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    pub entries: Vec<ParamEntry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor<T>, trainable: bool) -> ParamId {
        tensor.requires_grad = trainable;
        self.entries.push(ParamEntry {
            name: name.into(),
            tensor,
            trainable,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id].name
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.entries[id].trainable
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name)
    }

    /// Scalar count of trainable tensors.
    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|e| e.trainable).map(|e| e.tensor.len()).sum()
    }

    pub fn total_count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.entries.iter().all(|e| e.tensor.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    tensor: e.tensor.cast(),
                    trainable: e.trainable,
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TNS_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.tensor.rank() as u32).to_le_bytes());
            for &d in &e.tensor.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &e.tensor.data {
                out.extend_from_slice(&(v.f() as f32).to_le_bytes());
            }
        }
        out
    }

    /// Overwrite values from a `TNS1` image; names and shapes must match exactly.
    /// Nothing is modified unless the whole image validates.
    pub fn load_bytes(&mut self, bytes: &[u8]) -> Result<usize> {
        let mut r = Reader { bytes, pos: 0 };
        let tensors = read_tensors(&mut r)?;
        if tensors.len() != self.entries.len() {
            return Err(Error::ShapeMismatch(format!(
                "parameter file has {} tensors, model has {}",
                tensors.len(),
                self.entries.len()
            )));
        }
        for (e, (name, t)) in self.entries.iter().zip(&tensors) {
            if &e.name != name || e.tensor.shape != t.shape {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {name} {:?} does not match {} {:?}",
                    t.shape, e.name, e.tensor.shape
                )));
            }
        }
        for (e, (_, t)) in self.entries.iter_mut().zip(tensors) {
            e.tensor.data = t.data.iter().map(|&v| T::of(v as f64)).collect();
        }
        Ok(r.pos)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        self.load_bytes(&bytes).map(|_| ())
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl Reader<'_> {
    pub fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::VersionMismatch(format!(
                "truncated file: needed {n} bytes at offset {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub(crate) fn read_tensors(r: &mut Reader<'_>) -> Result<Vec<(String, Tensor<f32>)>> {
    if r.take(4)? != TNS_MAGIC {
        return Err(Error::VersionMismatch("missing TNS1 magic".into()));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| Error::VersionMismatch(e.to_string()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

/// Decode a `TNS1` image into named tensors.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    read_tensors(&mut Reader { bytes, pos: 0 })
}
