use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::array::Array;
use crate::error::{bail, Error, Result};

/// An ordered collection of named arrays: the weights of one network.
///
/// Serializes as `{"entries":[{"name":..,"shape":[..],"data":[..]}]}` with
/// order preserved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParamSet", into = "RawParamSet")]
pub struct ParamSet {
    entries: Vec<(String, Array)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParamSet {
    entries: Vec<RawEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawParamSet> for ParamSet {
    type Error = Error;

    fn try_from(raw: RawParamSet) -> Result<Self> {
        let entries = raw
            .entries
            .into_iter()
            .map(|e| Ok((e.name, Array::new(e.shape, e.data)?)))
            .collect::<Result<Vec<_>>>()?;
        ParamSet::new(entries)
    }
}

impl From<ParamSet> for RawParamSet {
    fn from(p: ParamSet) -> Self {
        RawParamSet {
            entries: p
                .entries
                .into_iter()
                .map(|(name, a)| {
                    let shape = a.shape().to_vec();
                    RawEntry { name, shape, data: a.into_data() }
                })
                .collect(),
        }
    }
}

impl ParamSet {
    pub fn new(entries: Vec<(String, Array)>) -> Result<Self> {
        for (i, (name, _)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(n, _)| n == name) {
                bail!(Invalid, "duplicate parameter name `{}`", name);
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Array)] {
        &self.entries
    }

    pub fn arrays(&self) -> impl Iterator<Item = &Array> {
        self.entries.iter().map(|(_, a)| a)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn num_scalars(&self) -> usize {
        self.arrays().map(Array::len).sum()
    }

    /// Same names and shapes in the same order.
    pub fn is_congruent(&self, other: &ParamSet) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape())
    }

    pub(crate) fn ensure_congruent(&self, other: &ParamSet, what: &str) -> Result<()> {
        if !self.is_congruent(other) {
            bail!(Shape, "{} is not congruent with the parameter set", what);
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> ParamSet {
        self.map(|_| 0.0)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ParamSet {
        ParamSet {
            entries: self.entries.iter().map(|(n, a)| (n.clone(), a.map(&f))).collect(),
        }
    }

    /// Replaces the values while keeping names and shapes. `arrays` must be
    /// congruent.
    pub fn with_arrays(&self, arrays: Vec<Array>) -> Result<ParamSet> {
        if arrays.len() != self.entries.len() {
            bail!(Shape, "expected {} arrays, got {}", self.entries.len(), arrays.len());
        }
        let mut entries = Vec::with_capacity(arrays.len());
        for ((name, old), new) in self.entries.iter().zip(arrays) {
            if old.shape() != new.shape() {
                bail!(Shape, "entry `{}` has shape {:?}, got {:?}", name, old.shape(), new.shape());
            }
            entries.push((name.clone(), new));
        }
        Ok(ParamSet { entries })
    }

    /// All values flattened in entry order.
    pub fn flatten(&self) -> Vec<f64> {
        self.arrays().flat_map(|a| a.data().iter().copied()).collect()
    }

    /// Inverse of [`flatten`](Self::flatten).
    pub fn unflatten(&self, flat: &[f64]) -> Result<ParamSet> {
        if flat.len() != self.num_scalars() {
            bail!(Shape, "expected {} scalars, got {}", self.num_scalars(), flat.len());
        }
        let mut offset = 0;
        let mut arrays = Vec::with_capacity(self.entries.len());
        for a in self.arrays() {
            let n = a.len();
            arrays.push(Array::new(a.shape().to_vec(), flat[offset..offset + n].to_vec())?);
            offset += n;
        }
        self.with_arrays(arrays)
    }

    /// Bit patterns of every value, for exact comparisons.
    pub fn to_bits(&self) -> Vec<u64> {
        self.arrays().flat_map(|a| a.data().iter().map(|v| v.to_bits())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;

    #[test]
    fn duplicate_names_rejected() {
        let a = Array::vector(vec![1.0]);
        let r = ParamSet::new(vec![("w".to_string(), a.clone()), ("w".to_string(), a)]);
        assert!(r.is_err());
    }

    #[test]
    fn flatten_roundtrip() {
        let p = ParamSet::new(vec![
            ("a".to_string(), Array::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap()),
            ("b".to_string(), Array::vector(vec![5.0])),
        ])
        .unwrap();
        let back = p.unflatten(&p.flatten()).unwrap();
        assert_eq!(p, back);
        assert!(p.is_congruent(&p.zeros_like()));
    }
}
