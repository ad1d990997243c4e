use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{ClassBank, ClassData, SplitTag};
use crate::error::{bail, Result};
use crate::numerics::{math, Array, Rng};

/// A synthetic distribution of learning problems with `modes` task families.
///
/// Every class belongs to one mode. A class mean lives only on its mode's
/// block of `feature_dim / modes` coordinates, with each in-block coordinate
/// `±signal_radius / sqrt(block)`; examples add isotropic Gaussian noise on all
/// coordinates. Blocks are disjoint, so class means of different modes are
/// orthogonal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModalMixtureSpec {
    pub feature_dim: usize,
    pub modes: usize,
    pub signal_radius: f64,
    pub noise_sigma: f64,
    pub classes_per_mode: usize,
    pub meta_test_fraction: f64,
    pub examples_per_class: usize,
}

impl Default for ModalMixtureSpec {
    fn default() -> Self {
        Self {
            feature_dim: 16,
            modes: 4,
            signal_radius: 3.0,
            noise_sigma: 1.0,
            classes_per_mode: 64,
            meta_test_fraction: 0.25,
            examples_per_class: 100,
        }
    }
}

impl ModalMixtureSpec {
    pub fn block_dim(&self) -> usize {
        if self.modes == 0 {
            0
        } else {
            self.feature_dim / self.modes
        }
    }

    /// Classes per mode in the meta-test split; the rest are meta-train.
    pub fn test_classes_per_mode(&self) -> usize {
        libm::floor(self.classes_per_mode as f64 * self.meta_test_fraction + 1e-9) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 || self.feature_dim == 0 || self.block_dim() == 0 {
            bail!(Config, "need 1 <= modes <= feature_dim, got modes={} feature_dim={}", self.modes, self.feature_dim);
        }
        if !(self.signal_radius > 0.0) {
            bail!(Config, "signal_radius must be positive");
        }
        // sigma = 0 is accepted as the noiseless limit.
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            bail!(Config, "noise_sigma must be non-negative");
        }
        if !(0.0..1.0).contains(&self.meta_test_fraction) {
            bail!(Config, "meta_test_fraction must lie in [0, 1)");
        }
        if self.classes_per_mode == 0 || self.examples_per_class == 0 {
            bail!(Config, "classes_per_mode and examples_per_class must be positive");
        }
        if self.classes_per_mode - self.test_classes_per_mode() == 0 {
            bail!(Config, "meta-train split would be empty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ModalBanks {
    pub meta_train: ClassBank,
    pub meta_test: ClassBank,
    /// Ground-truth mode of every class id (both splits).
    pub modes: BTreeMap<u32, u32>,
}

/// Draws a modal-mixture bank. Feature values are rounded to `f32` so the
/// banks survive the 32-bit feature-bank file format unchanged.
pub fn generate_modal_bank(spec: &ModalMixtureSpec, rng: &Rng) -> Result<ModalBanks> {
    spec.validate()?;
    let s = spec.block_dim();
    let amp = spec.signal_radius / math::sqrt(s as f64);
    let n_test = spec.test_classes_per_mode();
    let n_train = spec.classes_per_mode - n_test;

    let mut train = Vec::with_capacity(spec.modes * n_train);
    let mut test = Vec::with_capacity(spec.modes * n_test);
    let mut modes = BTreeMap::new();
    for mode in 0..spec.modes {
        for j in 0..spec.classes_per_mode {
            let class_id = (mode * spec.classes_per_mode + j) as u32;
            let mut crng = rng.stream(class_id as u64);
            let mut mean = alloc::vec![0.0; spec.feature_dim];
            for m in &mut mean[mode * s..(mode + 1) * s] {
                *m = if crng.coin() { amp } else { -amp };
            }
            let examples = (0..spec.examples_per_class)
                .map(|_| {
                    let v = mean
                        .iter()
                        .map(|&mu| (mu + spec.noise_sigma * crng.normal()) as f32 as f64)
                        .collect();
                    Array::vector(v)
                })
                .collect();
            modes.insert(class_id, mode as u32);
            let data = ClassData { class_id, examples };
            if j < n_train {
                train.push(data);
            } else {
                test.push(data);
            }
        }
    }
    let meta_train = ClassBank::new(spec.feature_dim, train, SplitTag::MetaTrain)?.with_modes(modes.clone());
    let meta_test = ClassBank::new(spec.feature_dim, test, SplitTag::MetaTest)?.with_modes(modes.clone());
    Ok(ModalBanks { meta_train, meta_test, modes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_counts() {
        let spec = ModalMixtureSpec::default();
        let b = generate_modal_bank(&spec, &Rng::new(1)).unwrap();
        assert_eq!(b.meta_train.num_classes(), 4 * 48);
        assert_eq!(b.meta_test.num_classes(), 4 * 16);
        assert_eq!(b.modes.len(), 256);
        let odd = ModalMixtureSpec { classes_per_mode: 10, meta_test_fraction: 0.25, ..spec };
        let b = generate_modal_bank(&odd, &Rng::new(1)).unwrap();
        // ceil(7.5) train, floor(2.5) test per mode
        assert_eq!(b.meta_train.num_classes(), 4 * 8);
        assert_eq!(b.meta_test.num_classes(), 4 * 2);
    }

    #[test]
    fn noiseless_examples_equal_means() {
        let spec = ModalMixtureSpec { noise_sigma: 0.0, classes_per_mode: 8, examples_per_class: 5, ..Default::default() };
        let b = generate_modal_bank(&spec, &Rng::new(2)).unwrap();
        let amp = (3.0f64 / 2.0) as f32 as f64;
        for c in b.meta_train.classes() {
            let mode = b.modes[&c.class_id] as usize;
            let first = &c.examples[0];
            for e in &c.examples {
                assert_eq!(e, first);
                for (i, &v) in e.data().iter().enumerate() {
                    if i / 4 == mode {
                        assert_eq!(v.abs(), amp);
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let bad = ModalMixtureSpec { modes: 0, ..Default::default() };
        assert!(generate_modal_bank(&bad, &Rng::new(0)).is_err());
        let bad = ModalMixtureSpec { modes: 17, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ModalMixtureSpec { signal_radius: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}
