//! Counter-based random draws.
//!
//! Every draw is addressed by `(key, stream, counter)` and computed by seeking a
//! ChaCha8 keystream, so results do not depend on call order or platform.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream reserved for seeded tie-break jitter.
pub(crate) const TIE_BREAK_STREAM: u64 = u64::MAX - 1;
/// Stream reserved for synthetic distractor choice.
pub(crate) const DISTRACTOR_STREAM: u64 = u64::MAX;

pub fn draw_u64(key: u64, stream: u64, counter: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(stream);
    rng.set_word_pos(u128::from(counter) * 2);
    rng.next_u64()
}

/// Uniform draw in `[0, 1)` with 53 bits of precision.
pub fn draw_unit(key: u64, stream: u64, counter: u64) -> f64 {
    (draw_u64(key, stream, counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
