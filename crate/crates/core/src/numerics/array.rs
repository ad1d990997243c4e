use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::math;
use crate::error::{bail, Error, Result};

/// A dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArray", into = "RawArray")]
pub struct Array {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawArray> for Array {
    type Error = Error;

    fn try_from(raw: RawArray) -> Result<Self> {
        Array::new(raw.shape, raw.data)
    }
}

impl From<Array> for RawArray {
    fn from(a: Array) -> Self {
        RawArray { shape: a.shape, data: a.data }
    }
}

impl Array {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            bail!(Shape, "shape {:?} has a zero dimension", shape);
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            bail!(Shape, "shape {:?} needs {} values, got {}", shape, len, data.len());
        }
        if data.iter().any(|v| !v.is_finite()) {
            bail!(Invalid, "array contains a non-finite value");
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    /// A rank-1 array. Panics on non-finite input.
    pub fn vector(data: Vec<f64>) -> Self {
        assert!(data.iter().all(|v| v.is_finite()), "non-finite vector entry");
        assert!(!data.is_empty(), "empty vector");
        Self { shape: vec![data.len()], data }
    }

    /// Builds an array without validation; callers guarantee consistency.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array {
        Array { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Softmax over a flat logit vector, computed with max subtraction.
pub fn softmax(logits: &Array) -> Array {
    let max = logits.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.data.iter().map(|&z| math::exp(z - max)).collect();
    let sum: f64 = exps.iter().sum();
    Array::from_parts(logits.shape.clone(), exps.into_iter().map(|e| e / sum).collect())
}

pub fn log_softmax(logits: &Array) -> Array {
    let lse = math::log_sum_exp(&logits.data);
    logits.map(|z| z - lse)
}

/// `-weight * ln softmax(logits)[label]`, evaluated in log space.
pub fn cross_entropy(logits: &Array, label: usize, weight: f64) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::Label { label, classes: logits.len() });
    }
    if !(weight > 0.0) {
        bail!(Invalid, "cross-entropy weight must be positive, got {}", weight);
    }
    let lse = math::log_sum_exp(&logits.data);
    // lse >= logits[label], so the value is never negative.
    Ok(weight * (lse - logits.data[label]).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Array::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Array::new(vec![0], vec![]).is_err());
        assert!(Array::new(vec![1], vec![f64::NAN]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Array::vector(vec![0.0, 0.0]));
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Array::vector(vec![1.0, 0.0]));
        let e = core::f64::consts::E;
        assert!((s.data()[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((s.data()[0] - 0.731059).abs() < 1e-6);
        assert!((s.data()[1] - 0.268941).abs() < 1e-6);
    }

    #[test]
    fn softmax_shift_invariant() {
        let a = Array::vector(vec![0.3, -1.2, 4.0, 2.5]);
        let b = a.map(|v| v + 123.25);
        let (sa, sb) = (softmax(&a), softmax(&b));
        for (x, y) in sa.data().iter().zip(sb.data()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((sa.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        let z = Array::vector(vec![0.0, 0.0]);
        let one = cross_entropy(&z, 0, 1.0).unwrap();
        assert!((one - core::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(cross_entropy(&z, 0, 2.0).unwrap(), 2.0 * one);
        assert!(matches!(cross_entropy(&z, 2, 1.0), Err(Error::Label { .. })));
        let confident = Array::vector(vec![-400.0, 400.0]);
        let v = cross_entropy(&confident, 1, 1.0).unwrap();
        assert!(v >= 0.0 && v.is_finite());
        let wrong = cross_entropy(&confident, 0, 1.0).unwrap();
        assert!(wrong.is_finite() && (wrong - 800.0).abs() < 1e-9);
    }
}
