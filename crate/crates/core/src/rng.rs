//! Counter-based random streams.
//!
//! Each path owns a ChaCha stream selected by `path_id`, keyed by the master
//! seed; draws for step `n` start at a fixed word offset `(n + 1) << 32`, so
//! every `(seed, path_id, step)` triple addresses the same numbers no matter
//! which worker simulates it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SLOT_SHIFT: u32 = 32;

#[derive(Debug, Clone)]
pub struct PathStream {
    rng: ChaCha8Rng,
}

impl PathStream {
    pub fn new(seed: u64, path_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path_id);
        Self { rng }
    }

    /// Generator positioned at the draws reserved for the initial state.
    pub fn initial(&mut self) -> &mut ChaCha8Rng {
        self.rng.set_word_pos(0);
        &mut self.rng
    }

    /// Generator positioned at the draws reserved for step `n`.
    pub fn step(&mut self, n: usize) -> &mut ChaCha8Rng {
        self.rng.set_word_pos(((n as u128) + 1) << SLOT_SHIFT);
        &mut self.rng
    }
}
