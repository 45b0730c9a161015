use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NumError, Tensor};

/// Named parameter tensors for one network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Largest absolute component over all tensors.
    pub fn max_abs(&self) -> f64 {
        self.tensors.values().map(Tensor::max_abs).fold(0.0, f64::max)
    }

    /// SHA-256 over names, shapes and value bits.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            h.update([0u8]);
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bit_eq(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|((na, a), (nb, b))| {
                na == nb
                    && a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Checks that `other` holds exactly the same names and shapes.
    pub fn check_aligned(&self, other: &BTreeMap<String, Tensor>) -> Result<(), NumError> {
        for (name, t) in &self.tensors {
            let o = other.get(name).ok_or_else(|| NumError::UnknownParam(name.clone()))?;
            if o.shape() != t.shape() {
                return Err(NumError::ShapeMismatch {
                    op: "align",
                    left: format!("param `{name}` {:?}", t.shape()),
                    right: format!("counterpart {:?}", o.shape()),
                });
            }
        }
        if let Some(extra) = other.keys().find(|k| !self.tensors.contains_key(*k)) {
            return Err(NumError::UnknownParam(extra.clone()));
        }
        Ok(())
    }

    pub fn as_map(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        ParamSet {
            tensors: iter.into_iter().collect(),
        }
    }
}

/// Clamps every component into `[-c, c]`.
pub fn clip_params(params: &mut ParamSet, c: f64) -> Result<(), NumError> {
    if !(c.is_finite() && c > 0.0) {
        return Err(NumError::Config(format!("clip threshold must be > 0, got {c}")));
    }
    for t in params.tensors.values_mut() {
        for v in t.data_mut() {
            *v = v.clamp(-c, c);
        }
    }
    Ok(())
}
