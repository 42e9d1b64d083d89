//! Per-chain noise stream.
//!
//! Backed by ChaCha20, a counter-based generator: `(seed, stream)` selects an
//! independent keystream and the word position is the counter, so every draw
//! of a run can be reproduced and chains never share randomness.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha20Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Vector of independent `N(0, 1)` draws.
    pub fn standard_normal(&mut self, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| self.rng.sample(StandardNormal)).collect()
    }

    /// Uniform draw on the open interval `(0, 1)`.
    pub fn uniform_open(&mut self) -> f64 {
        self.rng.sample(Open01)
    }

    /// Counter position in 32-bit words.
    pub fn word_position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Derive a seed for an auxiliary generator (e.g. minibatch shuffling).
    pub fn derive_seed(seed: u64, stream: u64, label: u64) -> u64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ label.rotate_left(17));
        rng.set_stream(stream.wrapping_add(label));
        rng.random()
    }
}
