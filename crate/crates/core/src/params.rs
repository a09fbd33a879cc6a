//! Named parameter storage shared by models, optimizers and checkpoints.

use std::collections::HashMap;

use crate::tensor::{Scalar, Tensor};

/// Ordered collection of named tensors. Insertion order is the canonical
/// order used for initialization, serialization and hashing.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
}

impl<T> Default for ParamStore<T> {
    fn default() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a tensor.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        match self.index.get(&name) {
            Some(&i) => self.entries[i].1 = value,
            None => {
                self.index.insert(name.clone(), self.entries.len());
                self.entries.push((name, value));
            }
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index.get(name).map(|&i| &mut self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalars across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (n, t) in &self.entries {
            out.insert(n.clone(), t.cast());
        }
        out
    }

    /// FNV-1a hash over names, shapes and raw little-endian values.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        let mut buf = Vec::new();
        for (n, t) in &self.entries {
            feed(n.as_bytes());
            for &d in t.shape() {
                feed(&(d as u64).to_le_bytes());
            }
            buf.clear();
            for &v in t.data() {
                v.write_le(&mut buf);
            }
            feed(&buf);
        }
        h
    }
}
