use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Seeded, platform-independent random stream.
///
/// Independent sub-streams are derived with [`RandomSource::substream`], so a
/// single user-facing seed can feed every stochastic component of a run.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

/// Well-known sub-stream identifiers used by the pipelines.
pub mod streams {
    pub const COHORT: u64 = 1;
    pub const SPLIT: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const TRIPLETS: u64 = 4;
    pub const INIT: u64 = 5;
    pub const DROPOUT: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const BLOBS: u64 = 8;
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh stream keyed by `(seed, stream)`; does not advance `self`.
    pub fn substream(&self, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        Self { seed: self.seed, rng }
    }

    /// Derives a sub-stream from `(seed, stream, index)`, e.g. one per benchmark seed.
    pub fn substream_indexed(&self, stream: u64, index: u64) -> Self {
        self.substream(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.standard_normal()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        // Fisher-Yates, spelled out so the draw sequence is fixed by this crate.
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
