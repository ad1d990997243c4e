#![allow(dead_code)]

use mmc_core::numerics::{Array, ParamSet, Rng};
use mmc_core::problems::{ClassBank, ClassData, Example, Label, SplitTag};

pub const FD_STEP: f64 = 1e-5;

/// Central finite differences of `f` at `params`, one coordinate at a time.
pub fn fd_grad(params: &ParamSet, f: impl Fn(&ParamSet) -> f64) -> Vec<f64> {
    let base = params.flatten();
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] += FD_STEP;
            minus[i] -= FD_STEP;
            let fp = f(&params.unflatten(&plus).unwrap());
            let fm = f(&params.unflatten(&minus).unwrap());
            (fp - fm) / (2.0 * FD_STEP)
        })
        .collect()
}

/// Largest coordinate error relative to the largest reference coordinate.
/// The scale is floored at 1e-3, below which finite-difference roundoff
/// (about 1e-11) would dominate.
pub fn rel_err(got: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(got.len(), reference.len());
    let scale = reference.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-3);
    got.iter().zip(reference).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

/// Gaussian classes with random means.
pub fn gaussian_bank(n_classes: u32, per_class: usize, dim: usize, seed: u64) -> ClassBank {
    let mut rng = Rng::new(seed);
    let classes = (0..n_classes)
        .map(|c| {
            let mean: Vec<f64> = (0..dim).map(|_| 2.0 * rng.normal()).collect();
            let examples =
                (0..per_class).map(|_| Array::vector(mean.iter().map(|m| m + rng.normal()).collect())).collect();
            ClassData { class_id: 100 + c, examples }
        })
        .collect();
    ClassBank::new(dim, classes, SplitTag::MetaTrain).unwrap()
}

pub fn example(features: Vec<f64>, positive: bool, class_id: u32) -> Example {
    Example {
        features: Array::vector(features),
        label: if positive { Label::Positive } else { Label::Negative },
        class_id,
    }
}
