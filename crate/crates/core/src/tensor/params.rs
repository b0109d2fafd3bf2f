use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Whether an entry is updated by the optimizer or only by forward passes
/// (batch-norm running statistics).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    Buffer,
}

/// Named parameter collection for one or more networks.
///
/// Iteration order is the lexicographic name order (BTreeMap), which the
/// checkpoint format and parameter digests rely on.
#[derive(Debug, Clone)]
pub struct ParamStore<T: Scalar> {
    entries: BTreeMap<String, (Tensor<T>, ParamKind)>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>, kind: ParamKind) {
        let name = name.into();
        assert!(
            self.entries.insert(name.clone(), (value, kind)).is_none(),
            "duplicate parameter name {name}"
        );
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|(t, _)| t)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|(t, _)| t)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn set_data(&mut self, name: &str, data: Vec<T>) -> Result<()> {
        let t = self.get_mut(name)?;
        if data.len() != t.numel() {
            return Err(Error::contract(format!(
                "parameter {name}: expected {} values, got {}",
                t.numel(),
                data.len()
            )));
        }
        t.data_mut().copy_from_slice(&data);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>, ParamKind)> {
        self.entries.iter().map(|(n, (t, k))| (n.as_str(), t, *k))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, (_, k))| *k == ParamKind::Trainable)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_numel(&self) -> usize {
        self.entries.values().map(|(t, _)| t.numel()).sum()
    }

    /// Element-precision conversion of every entry (exact for f32 -> f64).
    pub fn cast_to<U: Scalar>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, tensor, kind) in self.iter() {
            out.insert(name, tensor.cast_to::<U>(), kind);
        }
        out
    }

    /// FNV-1a digest over names, dims and raw little-endian values of every
    /// entry whose name starts with `prefix`. Used to assert the freezing
    /// contract of the adversarial loop.
    pub fn digest(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (name, (t, _)) in &self.entries {
            if !name.starts_with(prefix) {
                continue;
            }
            eat(name.as_bytes());
            for &d in t.dims() {
                eat(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                eat(&v.to_le_bytes_vec());
            }
        }
        h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_tracks_prefixed_entries_only() {
        let mut store = ParamStore::<f32>::new();
        store.insert("g.a", Tensor::full(&[2], 1.0), ParamKind::Trainable);
        store.insert("d.a", Tensor::full(&[2], 1.0), ParamKind::Trainable);
        let g0 = store.digest("g.");
        let d0 = store.digest("d.");
        store.get_mut("d.a").unwrap().data_mut()[0] = 2.0;
        assert_eq!(store.digest("g."), g0);
        assert_ne!(store.digest("d."), d0);
    }

    #[test]
    fn set_data_rejects_wrong_length() {
        let mut store = ParamStore::<f32>::new();
        store.insert("w", Tensor::zeros(&[3]), ParamKind::Trainable);
        assert!(store.set_data("w", vec![1.0; 2]).is_err());
        assert!(store.set_data("w", vec![1.0; 3]).is_ok());
    }
}
