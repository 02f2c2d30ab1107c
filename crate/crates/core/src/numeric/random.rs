//! Addressable, reproducible random streams.
//!
//! Every stream is identified by `(seed, stream_id)` and backed by ChaCha8,
//! whose 64-bit stream selector gives independent sequences for the same key.
//! Child streams are derived from the parent's identity (not its position),
//! so `fork(k)` yields the same child no matter how many draws the parent made.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combine a parent stream id with a child key.
#[inline]
fn derive_id(parent: u64, key: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ key.rotate_left(29) ^ 0xD6E8_FEB8_6659_FD93)
}

pub fn seeded_stream(seed: u64, stream_id: u64) -> RandomStream {
    RandomStream::new(seed, stream_id)
}

impl RandomStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RandomStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Independent child stream addressed by `key`.
    pub fn fork(&self, key: u64) -> RandomStream {
        RandomStream::new(self.seed, derive_id(self.stream_id, key))
    }

    /// Child stream addressed by a path of keys, e.g. `[layer, row]`.
    pub fn fork_path(&self, keys: &[u64]) -> RandomStream {
        let id = keys.iter().fold(self.stream_id, |id, &k| derive_id(id, k));
        RandomStream::new(self.seed, id)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform in `[lo, hi]`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Lognormal with location `mu` and shape `sigma` (median `exp(mu)`).
    pub fn lognormal(&mut self, mu: f64, sigma: f64) -> f64 {
        (mu + sigma * self.normal()).exp()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}

impl RngCore for RandomStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
