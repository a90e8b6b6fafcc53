//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own ChaCha stream derived from
//! the run seed, so adding a draw in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_INIT: u64 = 1;
pub const STREAM_TRAIN_NEGATIVES: u64 = 2;
pub const STREAM_TEST_NEGATIVES: u64 = 3;
pub const STREAM_ROBUSTNESS: u64 = 4;
const STREAM_SHUFFLE_BASE: u64 = 1 << 32;

pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream used to shuffle the given epoch and pass (0 = normal, 1 = adversarial).
pub fn shuffle_stream(seed: u64, epoch: u32, pass: u32) -> ChaCha8Rng {
    stream(seed, STREAM_SHUFFLE_BASE + 2 * epoch as u64 + pass as u64)
}
