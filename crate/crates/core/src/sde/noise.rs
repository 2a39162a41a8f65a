use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Per-particle Gaussian stream.
///
/// Backed by ChaCha8, a counter-based generator: the key is the run seed,
/// the stream id is the particle index, and the block counter advances with
/// the draws. Each particle's increments depend only on `(seed, index)` and
/// on how many draws it has consumed, never on scheduling.
#[derive(Clone, Debug)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        NoiseStream { rng }
    }

    #[inline]
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Stream id (the particle index).
    pub fn index(&self) -> u64 {
        self.rng.get_stream()
    }

    /// Position of the counter, in 32-bit words consumed.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }
}
