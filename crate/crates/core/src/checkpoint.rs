//! Binary container for model weights and small metadata.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "FGAN" | u16 version
//! u16 role count   { u16 len, utf-8 }
//! u32 meta count   { u32 len, key, u32 len, value }
//! u32 tensor count { u32 len, name, u8 dtype, u8 rank, u32 × rank extents, payload }
//! u32 crc32 of everything above
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use crate::models::{ModelError, ModelGraph};
use crate::params::ParamStore;
use crate::tensor::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"FGAN";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic bytes")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("checkpoint truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },
    #[error("invalid utf-8 in {0}")]
    Utf8(&'static str),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("tensor {name:?}: payload does not match its extents")]
    BadTensor { name: String },
    #[error("duplicate tensor {0:?}")]
    DuplicateTensor(String),
    #[error("{0} trailing bytes after the checksum")]
    TrailingBytes(usize),
    #[error("checkpoint has no {0:?} role")]
    MissingRole(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A tensor as stored on disk. Values are held in f64, which represents
/// every f32 exactly, and written back in their original dtype.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl StoredTensor {
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        StoredTensor {
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::from_f64_lossy(v)).collect();
        Tensor::new(self.shape.clone(), data).expect("validated on parse")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub roles: Vec<String>,
    pub metadata: BTreeMap<String, String>,
    tensors: Vec<(String, StoredTensor)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    /// Adds or replaces a tensor.
    pub fn put<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let name = name.into();
        let st = StoredTensor::from_tensor(t);
        match self.tensors.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => slot.1 = st,
            None => self.tensors.push((name, st)),
        }
    }

    pub fn get<T: Scalar>(&self, name: &str) -> Option<Tensor<T>> {
        self.stored(name).map(StoredTensor::to_tensor)
    }

    pub fn stored(&self, name: &str) -> Option<&StoredTensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    /// Stores a model's parameters under its role prefix.
    pub fn add_model<T: Scalar>(&mut self, model: &ModelGraph<T>) {
        if !self.roles.contains(&model.role) {
            self.roles.push(model.role.clone());
        }
        for (name, t) in model.params.iter() {
            self.put(format!("{}/{name}", model.role), t);
        }
    }

    /// Loads the parameters stored for `model.role`, rejecting any shape
    /// disagreement without modifying the model.
    pub fn load_model<T: Scalar>(&self, model: &mut ModelGraph<T>) -> Result<(), CheckpointError> {
        if !self.roles.contains(&model.role) {
            return Err(CheckpointError::MissingRole(model.role.clone()));
        }
        let prefix = format!("{}/", model.role);
        let mut store = ParamStore::new();
        for (name, t) in &self.tensors {
            if name.starts_with(&prefix) {
                store.insert(name.clone(), t.to_tensor::<T>());
            }
        }
        model.load_params(&store)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.roles.len() as u16).to_le_bytes());
        for r in &self.roles {
            out.extend_from_slice(&(r.len() as u16).to_le_bytes());
            out.extend_from_slice(r.as_bytes());
        }
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        for (k, v) in &self.metadata {
            for s in [k, v] {
                out.extend_from_slice(&(s.len() as u32).to_le_bytes());
                out.extend_from_slice(s.as_bytes());
            }
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.dtype.code());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match t.dtype {
                DType::F32 => t.data.iter().for_each(|&v| (v as f32).write_le(&mut out)),
                DType::F64 => t.data.iter().for_each(|&v| v.write_le(&mut out)),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let mut ck = Checkpoint::new();
        for _ in 0..r.u16()? {
            let n = r.u16()? as usize;
            ck.roles.push(r.string(n, "role")?);
        }
        for _ in 0..r.u32()? {
            let n = r.u32()? as usize;
            let k = r.string(n, "metadata key")?;
            let n = r.u32()? as usize;
            let v = r.string(n, "metadata value")?;
            ck.metadata.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let n = r.u32()? as usize;
            let name = r.string(n, "tensor name")?;
            let code = r.u8()?;
            let dtype = DType::from_code(code).ok_or(CheckpointError::UnknownDtype(code))?;
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n > 0)
                .ok_or_else(|| CheckpointError::BadTensor { name: name.clone() })?;
            let len = numel
                .checked_mul(dtype.size())
                .ok_or_else(|| CheckpointError::BadTensor { name: name.clone() })?;
            let raw = r.take(len)?;
            let data = match dtype {
                DType::F32 => raw.chunks_exact(4).map(|c| f32::read_le(c) as f64).collect(),
                DType::F64 => raw.chunks_exact(8).map(f64::read_le).collect(),
            };
            if ck.stored(&name).is_some() {
                return Err(CheckpointError::DuplicateTensor(name));
            }
            ck.tensors.push((name, StoredTensor { dtype, shape, data }));
        }
        let body_end = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(CheckpointError::Crc { stored, computed });
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(CheckpointError::Truncated { offset: self.bytes.len() })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self, n: usize, what: &'static str) -> Result<String, CheckpointError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Utf8(what))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.roles.push("X".into());
        ck.set_meta("epoch", "3");
        ck.put("X/w", &Tensor::<f32>::new([2, 2], vec![1.0, -2.5, 0.1, 3.0]).unwrap());
        ck.put("X/b", &Tensor::<f64>::new([1], vec![0.1]).unwrap());
        ck
    }

    #[test]
    fn roundtrip_preserves_dtype_and_bits() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.get::<f32>("X/w").unwrap().data()[2], 0.1f32);
        assert_eq!(back.stored("X/b").unwrap().dtype, DType::F64);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        let mut flipped = bytes.clone();
        let i = bytes.len() - 8;
        flipped[i] ^= 0x40;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(CheckpointError::Crc { .. })));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic)));
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&v2),
            Err(CheckpointError::UnsupportedVersion(2))
        ));
    }
}
