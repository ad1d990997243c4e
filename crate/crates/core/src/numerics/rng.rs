use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Deterministic, seedable generator (ChaCha8).
///
/// Independent consumers take their own sub-stream with [`Rng::stream`]. A
/// sub-stream depends only on the parent's key and the stream id, never on
/// how much of the parent has been consumed, so adding a consumer does not
/// perturb the draws seen by the others.
#[derive(Debug, Clone)]
pub struct Rng {
    key: u64,
    inner: ChaCha8Rng,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { key: seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Sub-stream `id` of this generator's key.
    pub fn stream(&self, id: u64) -> Rng {
        Rng::new(splitmix64(self.key ^ splitmix64(id.wrapping_add(0x5851_F42D_4C95_7F2D))))
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "empty range");
        self.inner.gen_range(0..n)
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn coin(&mut self) -> bool {
        self.inner.gen::<bool>()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// `amount` distinct elements drawn uniformly without replacement.
    pub fn choose_distinct<T: Clone>(&mut self, items: &[T], amount: usize) -> Vec<T> {
        assert!(amount <= items.len());
        let mut pool: Vec<T> = items.to_vec();
        let (chosen, _) = pool.partial_shuffle(&mut self.inner, amount);
        chosen.to_vec()
    }
}
